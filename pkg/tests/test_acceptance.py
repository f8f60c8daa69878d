"""End-to-end acceptance checks; each test records a pass/fail line for the summary."""

import itertools
import math
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from oracles import Poly, Quadratic, TimesX, gradient_check
from pathmv import cli
from pathmv import hjb_solver as hjb
from pathmv.clustering import AnnealConfig, Partition, anneal, best_of_restarts, energy, n_temperature_steps
from pathmv.hjb_solver import SolverConfig, StencilConfig, constants, func_derivs
from pathmv.market import PathGrid, SimConfig, constant_policy, simulate_exploratory_paths
from pathmv.marketdata import ModelParams
from pathmv.policy import exploratory_coeffs, hamiltonian_integrand, optimal_policy
from pathmv.similarity import SimilarityConfig, sim, similarity_matrix
from scipy import stats


# 1 ------------------------------------------------------------------------------

def test_similarity_suite(record_criterion):
    g = np.random.default_rng(1)
    start = time.perf_counter()
    sym = self_ = bounds = True
    for _ in range(1000):
        n = int(g.integers(2, 60))
        x, y = g.normal(0, 0.03, n), g.normal(0, 0.03, n)
        w = float(g.uniform(0, 1))
        cfg = SimilarityConfig(w)
        s_xy, s_yx = sim(x, y, cfg), sim(y, x, cfg)
        sym &= s_xy == s_yx
        self_ &= sim(x, x, cfg) == 1.0 and sim(y, y, cfg) == 1.0
        bounds &= -(1 - w) <= s_xy <= 1.0
    elapsed = time.perf_counter() - start
    ok = sym and self_ and bounds and elapsed < 5.0
    record_criterion(1, "similarity suite", ok,
                     f"symmetric={sym} self=1:{self_} bounds={bounds} in {elapsed:.2f}s")
    assert ok


# 2 ------------------------------------------------------------------------------

def _exhaustive_min(S, k_max, kappa):
    n = S.shape[0]
    best = math.inf
    for a in itertools.product(range(k_max), repeat=n):
        if a[0] != 0 or len(set(a)) < 2:  # label symmetry: fix the first asset
            continue
        best = min(best, energy(Partition(np.array(a), k_max), S, kappa))
    return best


def test_clustering_oracle(record_criterion):
    start = time.perf_counter()
    hits = 0
    for seed in range(100):
        g = np.random.default_rng(seed)
        S = similarity_matrix(g.normal(0, 0.02, (60, 8))).values
        target = _exhaustive_min(S, 3, 1e-4)
        res = best_of_restarts(S, AnnealConfig(k_max=3, restarts=100, seed=seed))
        hits += res.energy <= target + 1e-12
    elapsed = time.perf_counter() - start
    ok = hits >= 95 and elapsed < 120
    record_criterion(2, "clustering vs exhaustive minimum", ok, f"{hits}/100 seeds in {elapsed:.1f}s")
    assert ok


# 3 ------------------------------------------------------------------------------

def factor_returns(seed, n_days=250):
    """Twelve assets on three independent factors; uncentered correlation ~0.9 within, ~0 across."""
    g = np.random.default_rng(seed)
    truth = np.repeat([0, 1, 2], 4)
    f = g.normal(0, 0.01, (n_days, 3))
    return f[:, truth] + g.normal(0, 0.01 / 3, (n_days, 12)), truth


def test_planted_cluster_recovery(record_criterion):
    start = time.perf_counter()
    scores = []
    for seed in range(10):
        X, truth = factor_returns(seed)
        # w = 0 leaves the correlation term alone, giving within ~0.9 and cross ~0
        S = similarity_matrix(X, SimilarityConfig(0.0)).values
        res = best_of_restarts(S, AnnealConfig(T0=100, Tf=0.1, alpha=0.99, kappa=1e-4, restarts=100, seed=seed))
        scores.append(adjusted_rand_score(truth, res.partition.assignment))
    elapsed = time.perf_counter() - start
    good = sum(s >= 0.9 for s in scores)
    ok = good >= 9 and elapsed < 60
    record_criterion(3, "planted cluster recovery", ok,
                     f"ARI>=0.9 in {good}/10 seeds (ARIs {', '.join(f'{s:.2f}' for s in scores)}) in {elapsed:.1f}s")
    assert ok


# 4 ------------------------------------------------------------------------------

def test_annealing_mechanics(record_criterion):
    steps = n_temperature_steps(AnnealConfig(T0=100, Tf=0.1, alpha=0.99))
    S = np.eye(3)
    S[0, 1] = S[1, 0] = 0.7
    cfg = AnnealConfig(T0=1.0, Tf=0.995, alpha=0.99, kappa=1.0, k_max=2)
    start = Partition([0, 0, 1], 2)
    # every legal proposal from this state costs exactly 0.7
    n = 10_000
    accepted = sum(anneal(S, cfg, rng=s, initial=start).n_accepted for s in range(n))
    ci = stats.binomtest(accepted, n).proportion_ci(confidence_level=0.99)
    p = math.exp(-0.7)
    ok = steps == 688 and ci.low <= p <= ci.high
    record_criterion(4, "annealing mechanics", ok,
                     f"{steps} steps; acceptance {accepted / n:.4f} vs exp(-0.7)={p:.4f}, 99% CI [{ci.low:.4f}, {ci.high:.4f}]")
    assert ok


# 5 ------------------------------------------------------------------------------

def test_gradient_check(record_criterion):
    start = time.perf_counter()
    errs = [gradient_check(seed) for seed in range(10)]
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-4 and elapsed < 30
    record_criterion(5, "gradient check", ok, f"max relative error {max(errs):.2e} over 10 draws in {elapsed:.1f}s")
    assert ok


# 6 ------------------------------------------------------------------------------

def test_stencil_suite(record_criterion):
    h = 2.0**-7
    _, _, dxx = func_derivs(PathGrid(np.array([0.5, 1.0]), 0.125), Quadratic(), StencilConfig(h, 0.125))
    _, _, dxx_poly = func_derivs(PathGrid(np.array([1.0, 1.25]), 0.125), Poly(0.5, 0.25, 3.0), StencilConfig(h, 0.125))
    dt_u, _, _ = func_derivs(PathGrid(np.array([1.0, 0.75]), 0.25), TimesX(), StencilConfig(0.01, 0.25))
    u = Poly(0.3, -0.5, 1.5, 0.8)
    p = PathGrid(np.array([1.0, 1.1]), 0.1)
    errs = [abs(func_derivs(p, u, StencilConfig(hh, 0.1))[1] - u.dx(1.1)) for hh in (0.04, 0.02, 0.01)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = dxx == 2.0 and dxx_poly == 6.0 and dt_u == 0.75 and all(abs(r - 2.0) <= 0.2 for r in ratios)
    record_criterion(6, "stencil suite", ok,
                     f"dxx={dxx}, {dxx_poly}; dt={dt_u}; dx error ratios {ratios[0]:.3f}, {ratios[1]:.3f}")
    assert ok


# 7, 8 -------------------------------------------------------------------------------

SMOKE_PARAMS = ModelParams.constant(0.1, 0.2, r=0.0)
SMOKE_CFG = SolverConfig(gamma=0.01, T=1.0, N=20, M=200)
SMOKE_X0 = PathGrid(np.array([1.0]), SMOKE_CFG.dt)


@pytest.fixture(scope="module")
def smoke():
    start = time.perf_counter()
    theta, rep = hjb.train(SMOKE_X0, SMOKE_PARAMS, SMOKE_CFG, seed=0)
    mart = hjb.martingale_check(theta, SMOKE_PARAMS, SimConfig(20, 1.0, 10_000, seed=123), SMOKE_X0,
                                SMOKE_CFG.gamma, SMOKE_CFG.h, SMOKE_CFG.floor)
    return theta, rep, mart, time.perf_counter() - start


def test_solver_smoke(smoke, record_criterion):
    theta, rep, mart, elapsed = smoke
    drop = rep.initial_loss / rep.final_loss
    gap, se = float(mart.gaps[-1]), float(mart.stderrs[-1])
    ok = drop >= 10 and rep.floored_fraction < 0.01 and abs(gap) <= 3 * se and elapsed <= 600
    record_criterion(
        7, "solver smoke test", ok,
        f"loss {rep.initial_loss:.3g} -> {rep.final_loss:.3g} ({drop:.0f}x); floored {100 * rep.floored_fraction:.2f}%; "
        f"terminal gap {gap:.4g} (SE {se:.4g}), worst gap {mart.gap:.4g} (SE {mart.stderr:.4g}); {elapsed:.0f}s",
    )
    assert ok


def test_policy_optimality(smoke, record_criterion):
    theta, rep, _, _ = smoke
    times = np.append(SMOKE_X0.times, SMOKE_X0.t + SMOKE_CFG.dt)
    _, dx, dxx = hjb.tip_derivs(hjb.NetworkFunctional(theta), times, SMOKE_X0.values[None, :], SMOKE_CFG.h, SMOKE_CFG.dt)
    dx, dxx = float(dx[0]), float(dxx[0])
    pol = optimal_policy(SMOKE_PARAMS, dx, dxx, SMOKE_CFG.gamma, SMOKE_CFG.floor)
    a = np.random.default_rng(8).normal(0.0, 2.0, (100, 1))
    L = hamiltonian_integrand(a, SMOKE_PARAMS, dx, dxx) + SMOKE_CFG.gamma * pol.log_density(a)
    rel = float(np.std(L, ddof=1) / abs(np.mean(L)))
    ok = dxx > SMOKE_CFG.floor and rel < 1e-3
    record_criterion(8, "policy optimality", ok, f"dxx={dxx:.4g}, relative std of U + gamma ln pi {rel:.2e}")
    assert ok


# 9 ------------------------------------------------------------------------------

def test_constants(record_criterion):
    cases = [
        (ModelParams.from_cov(np.full(25, 0.1), np.diag(np.full(25, 0.04))), 0.01,
         (3.125, -0.0564478381611818580907744037368276, 0.125)),
        (ModelParams.constant(0.2, 1.0), 0.01, (0.02, 0.013836465597893729422376617182787, 0.005)),
        (ModelParams.from_cov([0.1, 0.2], [[0.04, 0.01], [0.01, 0.09]], r=0.02), 0.1,
         (0.226285714285714285714285714285712, -0.236278812865868432772559488916053, 0.1)),
    ]
    worst = 0.0
    for params, gamma, expected in cases:
        k = constants(params, gamma)
        for got, want in zip((k.A, k.B, k.C), expected):
            worst = max(worst, abs(got - want) / abs(want))
    ok = worst < 1e-12 and constants(cases[0][0], 0.01).C == 0.125
    record_criterion(9, "HJB constants", ok, f"3 parameter sets, max relative error {worst:.1e}, C(0.01, 25)=0.125")
    assert ok


# 10 -------------------------------------------------------------------------------

def test_exploratory_dynamics(record_criterion):
    params = ModelParams.from_cov([0.12, 0.07], [[0.04, 0.01], [0.01, 0.09]])
    pol = optimal_policy(params, dx=-0.8, dxx=1.6, gamma=0.05)
    M, dt = 100_000, 0.05
    ens = simulate_exploratory_paths(PathGrid(np.array([1.0]), dt), constant_policy(pol), params,
                                     SimConfig(N=1, T=dt, M=M, seed=21))
    inc = ens.values[:, 1] - ens.values[:, 0]
    drift, vol_sq = exploratory_coeffs(pol, params)
    mean_t, var_t = drift * dt, vol_sq * dt
    z_mean = (inc.mean() - mean_t) / math.sqrt(var_t / M)
    z_var = (inc.var(ddof=1) - var_t) / (var_t * math.sqrt(2.0 / (M - 1)))
    g = np.random.default_rng(5)
    worst_tr = 0.0
    for _ in range(20):
        d = int(g.integers(1, 6))
        B = g.normal(size=(d, d))
        p = ModelParams.from_cov(g.normal(0.1, 0.05, d), B @ B.T + 0.1 * np.eye(d))
        dxx = float(g.uniform(0.1, 5.0))
        op = optimal_policy(p, float(g.normal()), dxx, 0.01)
        worst_tr = max(worst_tr, abs(float(np.trace(p.Sigma.T @ op.cov)) - 0.01 * d / dxx))
    ok = abs(z_mean) <= 3 and abs(z_var) <= 3 and worst_tr <= 1e-12
    record_criterion(10, "exploratory dynamics", ok,
                     f"mean z={z_mean:.2f}, variance z={z_var:.2f}; trace identity error {worst_tr:.1e}")
    assert ok


# 11 -------------------------------------------------------------------------------

def test_end_to_end_determinism(tmp_path, record_criterion):
    # all 30 days on the bundled panel with d=25; the per-day training budget
    # is trimmed so two complete runs fit in a test session
    outs = [tmp_path / "run1", tmp_path / "run2"]
    args = ["backtest", "--seed", "7", "--M", "100", "--epochs", "20"]
    codes = [cli.main([*args, "--out", str(o)]) for o in outs]
    names = sorted(p.name for p in outs[0].iterdir())
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    lines = (outs[0] / "wealth.csv").read_text().splitlines()
    head = [float(r.split(",")[2]) for r in lines[1:3]]
    n_points = len(lines) - 1
    ok = codes == [0, 0] and same and head == [1.0, 1.01] and n_points == 32
    record_criterion(11, "end-to-end determinism", ok,
                     f"exit codes {codes}; {len(names)} files byte-identical={same}; ledger head {head}, {n_points} points")
    assert ok
