"""Monte Carlo simulation of asset prices and controlled wealth paths.

Normal draws are keyed by ``(seed, path index)``: each path owns a PCG64
stream seeded from ``SeedSequence([seed, i])`` and step ``k`` reads row
``k`` of it. Path ``i`` is therefore the same whatever the ensemble size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .marketdata import ModelParams
from .policy import GaussianPolicy, PolicyBatch


@dataclass(frozen=True)
class SimConfig:
    N: int = 20
    T: float = 1.0
    M: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.T <= 0 or self.M < 1:
            raise ValueError("need N >= 1, T > 0 and M >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.N


@dataclass(frozen=True)
class PathGrid:
    """A discretized wealth path ``x_0..x_k`` on the uniform grid ``t_j = t_0 + j dt``."""

    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size == 0:
            raise ValueError("a path needs at least one value")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    @property
    def k(self) -> int:
        """Index of the last grid point."""
        return self.values.size - 1

    @property
    def t(self) -> float:
        return self.t0 + self.dt * self.k

    @property
    def x(self) -> float:
        return float(self.values[-1])

    def __len__(self):
        return self.values.size

    def prefix(self, j: int) -> "PathGrid":
        """Path restricted to points ``0..j``."""
        return PathGrid(self.values[: j + 1], self.dt, self.t0)

    def append(self, x: float) -> "PathGrid":
        return PathGrid(np.append(self.values, x), self.dt, self.t0)


@dataclass(frozen=True)
class PathEnsemble:
    """``M`` paths sharing one time grid; ``values`` has shape ``(M, L)``."""

    values: np.ndarray
    dt: float
    t0: float = 0.0
    entropy: np.ndarray | None = None
    start: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[1])

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def paths(self) -> list[PathGrid]:
        return [PathGrid(v, self.dt, self.t0) for v in self.values]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", *(repr(float(t)) for t in self.times)])
            for i, row in enumerate(self.values):
                w.writerow([i, *(repr(float(x)) for x in row)])

    @classmethod
    def from_csv(cls, path) -> "PathEnsemble":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        times = np.array([float(t) for t in rows[0][1:]])
        vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
        dt = float(times[1] - times[0]) if times.size > 1 else 1.0
        return cls(vals, dt, float(times[0]))


def path_normals(seed: int, n_paths: int, n_rows: int, channels: int, first_path: int = 0) -> np.ndarray:
    """Standard normals of shape ``(n_paths, n_rows, channels)`` in the per-path layout."""
    out = np.empty((n_paths, n_rows, channels))
    for i in range(n_paths):
        ss = np.random.SeedSequence([int(seed), first_path + i])
        out[i] = np.random.Generator(np.random.PCG64(ss)).standard_normal((n_rows, channels))
    return out


def simulate_assets(params: ModelParams, cfg: SimConfig) -> np.ndarray:
    """Price paths ``(M, N + 1, d)`` from log-Euler steps, all starting at 1."""
    dt = cfg.dt
    Z = path_normals(cfg.seed, cfg.M, cfg.N, params.d)
    drift = (params.mu - 0.5 * np.diag(params.Sigma)) * dt
    shocks = math.sqrt(dt) * Z @ params.sigma.T
    logp = np.cumsum(drift + shocks, axis=1)
    logp = np.concatenate([np.zeros((cfg.M, 1, params.d)), logp], axis=1)
    return np.exp(logp)


def step_wealth(x, a, params: ModelParams, dt: float, Z) -> np.ndarray:
    """One Euler step of classically controlled wealth with dollar holdings ``a``."""
    a = np.asarray(a, dtype=float)
    Z = np.asarray(Z, dtype=float)
    return x + (a @ params.excess) * dt + np.sum((a @ params.sigma) * Z, axis=-1) * math.sqrt(dt)


def step_exploratory(x, pol, params: ModelParams, dt: float, draws) -> np.ndarray:
    """One Euler step of the exploratory wealth process.

    ``draws[..., :d]`` drive the market noise and ``draws[..., d]`` the
    independent exploration noise.
    """
    if isinstance(pol, GaussianPolicy):
        pol = PolicyBatch(pol.mean[None], pol.cov[None])
    draws = np.atleast_2d(draws)
    d = params.d
    tr = pol.trace_term(params)
    if np.any(tr < 0):
        raise ValueError("policy covariance is not positive semidefinite")
    m = pol.mean
    sq = math.sqrt(dt)
    out = (
        x
        + (m @ params.excess) * dt
        + np.sum((m @ params.sigma) * draws[:, :d], axis=-1) * sq
        + np.sqrt(tr) * sq * draws[:, d]
    )
    return out


PolicyFn = Callable[[np.ndarray, np.ndarray], PolicyBatch]


def constant_policy(pol: GaussianPolicy) -> PolicyFn:
    """Policy function ignoring the path."""

    def fn(times, values):
        B = values.shape[0]
        return PolicyBatch(np.broadcast_to(pol.mean, (B, pol.d)), np.broadcast_to(pol.cov, (B, pol.d, pol.d)))

    return fn


def per_path_policy(fn: Callable[[PathGrid], GaussianPolicy], dt: float, t0: float = 0.0) -> PolicyFn:
    """Adapt a ``PathGrid -> GaussianPolicy`` callable to the batched interface."""

    def batched(times, values):
        pols = [fn(PathGrid(v, dt, t0)) for v in values]
        return PolicyBatch(np.stack([p.mean for p in pols]), np.stack([p.cov for p in pols]))

    return batched


def simulate_exploratory_paths(
    x0_path: PathGrid,
    policy_fn: PolicyFn,
    params: ModelParams,
    cfg: SimConfig,
    record_entropy: bool = False,
) -> PathEnsemble:
    """Extend ``x0_path`` to the horizon ``cfg.T`` along ``cfg.M`` paths.

    The policy is re-evaluated at every step on the growing prefix and held
    fixed over the step. Draws for global step ``k`` come from row ``k`` of
    each path's stream.
    """
    dt = cfg.dt
    if not math.isclose(x0_path.dt, dt, rel_tol=1e-9):
        raise ValueError(f"prefix grid dt={x0_path.dt} differs from simulation dt={dt}")
    p = x0_path.k
    if p > cfg.N:
        raise ValueError("prefix is longer than the simulation grid")
    L = cfg.N + 1
    values = np.empty((cfg.M, L))
    values[:, : p + 1] = x0_path.values
    times = x0_path.t0 + dt * np.arange(L)
    draws = path_normals(cfg.seed, cfg.M, cfg.N, params.d + 1)
    entropy = np.zeros((cfg.M, cfg.N - p)) if record_entropy else None
    for k in range(p, cfg.N):
        pol = policy_fn(times[: k + 1], values[:, : k + 1])
        if record_entropy:
            entropy[:, k - p] = pol.entropy_cost()
        values[:, k + 1] = step_exploratory(values[:, k], pol, params, dt, draws[:, k])
    return PathEnsemble(values, dt, x0_path.t0, entropy, start=p)
