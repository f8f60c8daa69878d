"""Path-dependent HJB solver: functional-derivative stencils, residual loss, training.

For a value functional ``u`` of the wealth path ``X = (x_0..x_k)`` the
derivatives are finite differences under path extensions::

    dt u  = [u(flat(X)) - u(X)] / dt       flat: append x_k at t_k + dt
    dx u  = [u(X^h) - u(X)] / h            X^h: bump the last value by h
    dxx u = [u(X^h) - 2 u(X) + u(X^-h)] / h^2

and the reduced HJB residual is ``dt u - A dx^2 / dxx + C ln dxx + B`` with
``dxx`` floored at ``eps``. Training fits an LSTM + MLP value network to
zero residual along simulated exploratory wealth paths, with a terminal
penalty anchoring ``u(X_T) = (x_T - w)^2 - (w - z)^2``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .market import (
    PathEnsemble,
    PathGrid,
    SimConfig,
    constant_policy,
    simulate_exploratory_paths,
)
from .marketdata import ModelParams
from .nn import network as net
from .nn import tape as T
from .nn.optim import AdamState, opt_step
from .policy import LOG_2PIE, PolicyBatch, bootstrap_policy, optimal_policy_batch

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class StencilConfig:
    h: float = 0.01
    dt: float = 0.05

    def __post_init__(self):
        if not (self.h > 0 and self.dt > 0):
            raise ValueError("stencil needs h > 0 and dt > 0")


@dataclass(frozen=True)
class HjbConstants:
    A: float
    B: float
    C: float


@dataclass(frozen=True)
class SolverConfig:
    """Solver and training settings.

    ``lagrange_w=None`` starts the multiplier at the classical closed form
    for the remaining horizon (see :func:`initial_lagrange_w`).
    """

    gamma: float = 0.01
    z: float = 1.1
    lagrange_w: float | None = None
    M: int = 200
    N: int = 20
    T: float = 1.0
    h: float = 0.01
    terminal_weight: float = 1.0
    floor: float = 1e-6
    outer_rounds: int = 3
    epochs: int = 300
    lr: float = 1e-3
    w_step: float = 0.05
    w_bracket: float = 5.0
    hidden: int = 32
    layers: tuple[int, ...] = (64, 64, 64)
    x_scale: float = 0.25
    x_center: float = 1.0
    payoff_baseline: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be >= 1")
        if self.terminal_weight < 0:
            raise ValueError("terminal_weight must be >= 0")
        if not self.floor > 0:
            raise ValueError("floor must be positive")
        if not (self.T > 0 and self.h > 0):
            raise ValueError("T and h must be positive")
        if self.outer_rounds < 1 or self.epochs < 0:
            raise ValueError("need outer_rounds >= 1 and epochs >= 0")
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def stencil(self) -> StencilConfig:
        return StencilConfig(self.h, self.dt)


# -- path extensions and stencils ---------------------------------------------

def bump_vertical(path: PathGrid, h: float) -> PathGrid:
    v = path.values.copy()
    v[-1] += h
    return PathGrid(v, path.dt, path.t0)


def extend_flat(path: PathGrid) -> PathGrid:
    return path.append(path.x)


class ValueFunctional(Protocol):
    """Anything that evaluates ``u`` at the tips of a batch of equal-length paths."""

    def values(self, times: np.ndarray, values: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class NetworkFunctional:
    theta: net.NetworkParams

    def values(self, times, values):
        return net.values_batch(times, values, self.theta)

    def stencil(self, times, values, h, dt):
        return net.tip_stencil(times, values, self.theta, h, dt)


@dataclass(frozen=True)
class CallableFunctional:
    """Adapter for a per-path callable ``PathGrid -> float``."""

    fn: Callable[[PathGrid], float]
    dt: float
    t0: float = 0.0

    def values(self, times, values):
        return np.array([float(self.fn(PathGrid(v, self.dt, self.t0))) for v in np.atleast_2d(values)])


@dataclass(frozen=True)
class AnalyticMV:
    """Closed-form Markov value function of the exploratory mean-variance problem.

    ``V(t, x) = (x - w)^2 e^{-2A(T-t)} + (C ln 2 + B)(T - t) - A C (T - t)^2 - (w - z)^2``
    solves the reduced HJB equation exactly with terminal value
    ``(x - w)^2 - (w - z)^2``.
    """

    consts: HjbConstants
    w: float
    z: float
    T: float

    def __call__(self, t, x):
        s = self.T - np.asarray(t, dtype=float)
        k = self.consts
        return (
            (np.asarray(x, dtype=float) - self.w) ** 2 * np.exp(-2.0 * k.A * s)
            + (k.C * math.log(2.0) + k.B) * s
            - k.A * k.C * s * s
            - (self.w - self.z) ** 2
        )

    def values(self, times, values):
        values = np.atleast_2d(values)
        return self(times[values.shape[1] - 1], values[:, -1])


def _as_functional(u, dt: float, t0: float = 0.0):
    if isinstance(u, net.NetworkParams):
        return NetworkFunctional(u)
    if hasattr(u, "values"):
        return u
    if callable(u):
        return CallableFunctional(u, dt, t0)
    raise TypeError(f"cannot evaluate {type(u).__name__} as a value functional")


def tip_values(u, times, values, h: float, dt: float):
    """``(u, u(X^h), u(X^-h), u(flat X))`` at each row's tip."""
    if hasattr(u, "stencil"):
        return u.stencil(times, values, h, dt)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    L = values.shape[1]
    up, um = values.copy(), values.copy()
    up[:, -1] += h
    um[:, -1] -= h
    flat = np.concatenate([values, values[:, -1:]], axis=1)
    times_ext = np.append(times[:L], times[L - 1] + dt)
    return u.values(times, values), u.values(times, up), u.values(times, um), u.values(times_ext, flat)


def derivs_from_tips(u0, up, um, uf, h: float, dt: float):
    return (uf - u0) / dt, (up - u0) / h, (up - 2.0 * u0 + um) / (h * h)


def func_derivs(path: PathGrid, u, cfg: StencilConfig) -> tuple[float, float, float]:
    """``(dt u, dx u, dxx u)`` at ``path`` from flat and vertical extensions.

    The flat extension uses the path's own grid step.
    """
    fu = _as_functional(u, path.dt, path.t0)
    times = np.append(path.times, path.t + path.dt)
    tips = tip_values(fu, times, path.values[None, :], cfg.h, path.dt)
    return tuple(float(np.asarray(d).ravel()[0]) for d in derivs_from_tips(*tips, cfg.h, path.dt))


# -- constants, residual, loss ------------------------------------------------

def constants(params: ModelParams, gamma: float, d: int | None = None) -> HjbConstants:
    d = params.d if d is None else d
    if d != params.d:
        raise ValueError(f"d={d} does not match the {params.d}-asset parameters")
    diag = np.diag(params.sigma)
    if np.any(np.abs(diag) <= 1e-300) or not np.all(np.isfinite(params.sigma)):
        raise np.linalg.LinAlgError("sigma is singular")
    theta = np.linalg.solve(params.sigma, params.excess)
    A = 0.5 * float(theta @ theta)
    logdet = 2.0 * float(np.sum(np.log(np.abs(diag))))
    B = 0.5 * gamma * (d - d * math.log(2 * math.pi * math.e * gamma) + logdet)
    C = 0.5 * gamma * d
    return HjbConstants(A, B, C)


@dataclass
class FloorCounter:
    floored: int = 0
    total: int = 0

    @property
    def fraction(self) -> float:
        return self.floored / self.total if self.total else 0.0


def residual_from_derivs(dt_u, dx_u, dxx_u, k: HjbConstants, floor: float = 1e-6):
    c = np.maximum(dxx_u, floor)
    return dt_u - k.A * dx_u * dx_u / c + k.C * np.log(c) + k.B


def residual(
    path: PathGrid,
    u,
    k: HjbConstants,
    cfg: StencilConfig,
    floor: float = 1e-6,
    counter: FloorCounter | None = None,
) -> float:
    dt_u, dx_u, dxx_u = func_derivs(path, u, cfg)
    if counter is not None:
        counter.total += 1
        counter.floored += int(dxx_u < floor)
    return float(residual_from_derivs(dt_u, dx_u, dxx_u, k, floor))


def terminal_target(x_T, w: float, z: float):
    return (np.asarray(x_T, dtype=float) - w) ** 2 - (w - z) ** 2


def loss(
    paths,
    u,
    k: HjbConstants,
    cfg: SolverConfig,
    w: float,
    counter: FloorCounter | None = None,
) -> float:
    """Mean squared prefix residual plus the weighted terminal mismatch.

    Reference implementation over explicit :class:`PathGrid` objects; the
    trainer uses the batched, differentiable twin :func:`batched_loss`.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("loss needs at least one path")
    st = StencilConfig(cfg.h, paths[0].dt)
    res, term = [], []
    for p in paths:
        N = p.k
        for i in range(N):
            res.append(residual(p.prefix(i), u, k, st, cfg.floor, counter))
        fu = _as_functional(u, p.dt, p.t0)
        uT = float(fu.values(p.times, p.values[None, :])[0])
        term.append((uT - float(terminal_target(p.x, w, cfg.z))) ** 2)
    interior = float(np.mean(np.square(res))) if res else 0.0
    return interior + cfg.terminal_weight * float(np.mean(term))


def batched_loss(theta, values, times, k: HjbConstants, cfg: SolverConfig, w: float):
    """Differentiable loss over an ensemble ``values`` of shape ``(M, N + 1)``.

    ``theta`` may hold plain arrays or tape leaves. Returns the loss and the
    number of floored curvature evaluations.
    """
    values = np.asarray(values, dtype=float)
    M, L = values.shape
    N = L - 1
    if N < 1:
        raise ValueError("paths need at least one step")
    h, dt = cfg.h, float(times[1] - times[0])
    mlp = theta.mlp

    def sx(x):
        return (x - theta.x_center) / theta.x_scale

    states = net.lstm_states(sx(values[:, :N]), theta.lstm)  # a_0 .. a_{N-1}
    Q = net.summary_part(T.stack(states, axis=1), mlp)  # (M, N, n1)
    n1 = T._val(Q).shape[-1]
    P = T.concat([np.zeros((M, 1, n1)), T.getitem(Q, (slice(None), slice(0, N - 1)))], axis=1)
    t_i = np.broadcast_to(times[:N] / theta.horizon, (M, N))
    t_f = np.broadcast_to(times[1:N + 1] / theta.horizon, (M, N))
    x = values[:, :N]
    pre = T.stack([
        net.first_layer(t_i, sx(x), P, mlp),
        net.first_layer(t_i, sx(x + h), P, mlp),
        net.first_layer(t_i, sx(x - h), P, mlp),
        net.first_layer(t_f, sx(x), Q, mlp),
    ])
    pre_T = net.first_layer(
        np.full(M, times[N] / theta.horizon), sx(values[:, N]),
        T.getitem(Q, (slice(None), N - 1)), mlp,
    )
    rows = T.concat([T.reshape(pre, (4 * M * N, n1)), pre_T], axis=0)
    out = T.reshape(net.mlp_head(rows, mlp), (-1,))
    if theta.payoff_w is not None:
        xs = np.concatenate([(x + s).ravel() for s in (0.0, h, -h, 0.0)] + [values[:, N]])
        out = T.add(out, theta.baseline(xs))
    u0 = T.getitem(out, slice(0, M * N))
    up = T.getitem(out, slice(M * N, 2 * M * N))
    um = T.getitem(out, slice(2 * M * N, 3 * M * N))
    uf = T.getitem(out, slice(3 * M * N, 4 * M * N))
    uT = T.getitem(out, slice(4 * M * N, None))

    dt_u = T.mul(T.sub(uf, u0), 1.0 / dt)
    dx_u = T.mul(T.sub(up, u0), 1.0 / h)
    dxx = T.mul(T.add(T.sub(up, T.mul(u0, 2.0)), um), 1.0 / (h * h))
    n_floored = int(np.count_nonzero(T._val(dxx) < cfg.floor))
    c = T.maximum(dxx, cfg.floor)
    R = T.add(T.add(T.sub(dt_u, T.mul(T.div(T.square(dx_u), c), k.A)), T.mul(T.log(c), k.C)), k.B)
    total = T.mean(T.square(R))
    if cfg.terminal_weight > 0:
        mismatch = T.sub(uT, terminal_target(values[:, N], w, cfg.z))
        total = T.add(total, T.mul(T.mean(T.square(mismatch)), cfg.terminal_weight))
    return total, n_floored


# -- policy induced by a value functional -------------------------------------

def tip_derivs(u, times, values, h: float, dt: float):
    return derivs_from_tips(*tip_values(u, times, values, h, dt), h, dt)


def induced_policy(u, params: ModelParams, gamma: float, h: float, dt: float, floor: float = 1e-6):
    """Policy function mapping each path prefix to the optimal Gaussian at its tip."""
    fu = _as_functional(u, dt)

    def fn(times, values):
        times_ext = np.append(times, times[-1] + dt)
        _, dx, dxx = tip_derivs(fu, times_ext, values, h, dt)
        return optimal_policy_batch(params, dx, dxx, gamma, floor)

    return fn


# -- Lagrange multiplier --------------------------------------------------------

def update_lagrange_w(w: float, mean_xT: float, z: float, step: float = 0.05, bracket: float = 5.0) -> float:
    """Dual step ``w - step (E[x_T] - z)`` clipped to ``[z - bracket, z + bracket]``."""
    return float(np.clip(w - step * (mean_xT - z), z - bracket, z + bracket))


def initial_lagrange_w(k: HjbConstants, x: float, z: float, horizon: float, bracket: float = 5.0) -> float:
    """Classical multiplier ``(z e^{2A s} - x) / (e^{2A s} - 1)`` for remaining time ``s``."""
    a = 2.0 * k.A * horizon
    if a < 1e-12:
        return float(z)
    return float(np.clip(z + (z - x) / math.expm1(a), z - bracket, z + bracket))


# -- training -----------------------------------------------------------------

@dataclass
class TrainReport:
    loss_curve: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    floored: int = 0
    evaluations: int = 0
    w_history: list[float] = field(default_factory=list)
    mean_xT: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def floored_fraction(self) -> float:
        return self.floored / self.evaluations if self.evaluations else 0.0

    @property
    def final_w(self) -> float:
        return self.w_history[-1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["floored_fraction"] = self.floored_fraction
        return out


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def train(
    x0_path: PathGrid,
    params: ModelParams,
    cfg: SolverConfig,
    seed: int = 0,
    theta0: net.NetworkParams | None = None,
    callback: Callable[[int, int, float], None] | None = None,
) -> tuple[net.NetworkParams, TrainReport]:
    """Fit the value network on simulated exploratory paths from ``x0_path``.

    Each outer round simulates ``M`` paths (bootstrap policy first, then the
    policy induced by the current network), runs ``epochs`` full-batch Adam
    steps, then moves the multiplier ``w`` toward ``E[x_T] = z`` using a
    fresh ensemble under the trained policy.
    """
    start = time.perf_counter()
    k = constants(params, cfg.gamma)
    sim = SimConfig(cfg.N, cfg.T, cfg.M)
    if not math.isclose(x0_path.dt, sim.dt, rel_tol=1e-9):
        raise ValueError(f"x0_path grid dt={x0_path.dt} differs from T/N={sim.dt}")
    horizon = x0_path.t0 + cfg.T
    ss_init, *ss_rounds = np.random.SeedSequence(seed).spawn(1 + 2 * cfg.outer_rounds)
    if theta0 is None:
        theta = net.init_params(cfg.hidden, cfg.layers, horizon, cfg.x_center, cfg.x_scale, ss_init)
    else:
        theta = theta0.copy()
    w = cfg.lagrange_w
    if w is None:
        w = initial_lagrange_w(k, x0_path.x, cfg.z, horizon - x0_path.t, cfg.w_bracket)
    report = TrainReport(w_history=[float(w)])
    if cfg.payoff_baseline:
        theta = replace(theta, payoff_w=float(w), payoff_z=cfg.z)
    times = x0_path.t0 + sim.dt * np.arange(cfg.N + 1)
    state = AdamState.zeros(theta.size)
    flat = theta.flat()

    for r in range(cfg.outer_rounds):
        if r == 0:
            pol = constant_policy(bootstrap_policy(params, cfg.gamma))
        else:
            pol = induced_policy(theta, params, cfg.gamma, cfg.h, sim.dt, cfg.floor)
        ens = simulate_exploratory_paths(
            x0_path, pol, params, SimConfig(cfg.N, cfg.T, cfg.M, _seed_int(ss_rounds[2 * r]))
        )
        for epoch in range(cfg.epochs + (1 if r == cfg.outer_rounds - 1 else 0)):
            vs, view = net.leaves(theta)
            L, n_floored = batched_loss(view, ens.values, times, k, cfg, w)
            val = float(T._val(L))
            if not math.isfinite(val):
                raise TrainingDivergence(
                    f"loss became {val} in round {r}, epoch {epoch}; "
                    f"last finite loss {report.loss_curve[-1] if report.loss_curve else 'n/a'}"
                )
            if r == 0 and epoch == 0:
                report.initial_loss = val
            report.loss_curve.append(val)
            report.floored, report.evaluations = n_floored, cfg.M * cfg.N
            if callback is not None:
                callback(r, epoch, val)
            if epoch == cfg.epochs:
                break  # evaluation-only pass after the last update
            g = np.concatenate([np.ravel(x) for x in T.grad(L, vs)])
            flat, state = opt_step(flat, g, state, cfg.lr)
            theta = theta.with_flat(flat)
        pol = induced_policy(theta, params, cfg.gamma, cfg.h, sim.dt, cfg.floor)
        check = simulate_exploratory_paths(
            x0_path, pol, params, SimConfig(cfg.N, cfg.T, cfg.M, _seed_int(ss_rounds[2 * r + 1]))
        )
        mean_xT = float(check.values[:, -1].mean())
        report.mean_xT.append(mean_xT)
        if r < cfg.outer_rounds - 1:
            w = update_lagrange_w(w, mean_xT, cfg.z, cfg.w_step, cfg.w_bracket)
            report.w_history.append(w)
            if cfg.payoff_baseline:
                theta = replace(theta, payoff_w=float(w))
        logger.info("round %d: loss %.3g, E[x_T] %.4f, w %.4f", r, report.loss_curve[-1], mean_xT, w)

    report.final_loss = report.loss_curve[-1]
    report.seconds = time.perf_counter() - start
    theta.meta.update({"w": float(w), "z": cfg.z, "gamma": cfg.gamma})
    return theta, report


# -- martingale diagnostic ----------------------------------------------------

@dataclass
class MartingaleResult:
    taus: np.ndarray
    gaps: np.ndarray
    stderrs: np.ndarray

    @property
    def worst(self) -> int:
        return int(np.argmax(np.abs(self.gaps)))

    @property
    def gap(self) -> float:
        return float(self.gaps[self.worst])

    @property
    def stderr(self) -> float:
        return float(self.stderrs[self.worst])


def martingale_check(
    u,
    params: ModelParams,
    sim: SimConfig,
    x0_path: PathGrid,
    gamma: float,
    h: float = 0.01,
    floor: float = 1e-6,
    policy_fn=None,
) -> MartingaleResult:
    """Monte Carlo test of ``E[Y_tau] = Y_t`` for ``Y_tau = u(X_tau) + gamma sum f dt``.

    ``f`` is the negative entropy of the Gaussian policy applied over each
    step. By default the policy is the one induced by ``u``. Gaps and their
    standard errors are reported for every grid time from the prefix tip to
    the horizon.
    """
    fu = _as_functional(u, sim.dt, x0_path.t0)
    if policy_fn is None:
        policy_fn = induced_policy(fu, params, gamma, h, sim.dt, floor)
    ens: PathEnsemble = simulate_exploratory_paths(x0_path, policy_fn, params, sim, record_entropy=gamma > 0)
    p = ens.start
    times = ens.times
    y0 = float(fu.values(times, x0_path.values[None, :])[0])
    running = np.zeros(ens.M)
    taus, gaps, ses = [], [], []
    for j in range(p, sim.N + 1):
        if j > p and gamma > 0:
            running = running + gamma * ens.entropy[:, j - 1 - p] * sim.dt
        Y = fu.values(times, ens.values[:, : j + 1]) + running
        diff = Y - y0
        taus.append(times[j])
        gaps.append(float(np.mean(diff)))
        ses.append(float(np.std(diff, ddof=1) / math.sqrt(ens.M)) if ens.M > 1 else float("nan"))
    return MartingaleResult(np.array(taus), np.array(gaps), np.array(ses))
