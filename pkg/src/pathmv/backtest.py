"""Daily re-estimation and re-training backtest of the path-dependent strategy.

Each trading day the drift and covariance are estimated from the trailing
window, a value network is trained from the current wealth path, holdings
are drawn from the resulting Gaussian policy and the wealth moves with the
realized next-day simple returns::

    x' = x + sum_i a_i (R_i - r dt)

The wealth path is seeded with ``[1.0, 1.01]`` so the path-dependent state
has a nontrivial history on the first day.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import hjb_solver as hjb
from .clustering import AnnealConfig, best_of_restarts, select_representatives
from .market import PathGrid
from .marketdata import DT_DAY, EstimationError, PricePanel, estimate_params, to_returns
from .nn.network import NetworkParams
from .policy import GaussianPolicy, optimal_policy, sample
from .similarity import SimilarityConfig, similarity_matrix

logger = logging.getLogger(__name__)

SEED_PATH = (1.0, 1.01)


class BacktestError(RuntimeError):
    pass


@dataclass(frozen=True)
class BacktestConfig:
    """Strategy settings; solver fields are passed through to :class:`SolverConfig`."""

    gamma: float = 0.01
    d: int = 25
    r: float = 0.0
    window: int = 75
    days: int = 30
    M: int = 500
    z: float = 1.1
    seed: int = 0
    benchmark: str | None = None
    cluster: bool = False
    warm_start: bool = False
    zero_holdings: bool = False
    epochs: int = 100
    outer_rounds: int = 1
    lr: float = 1e-3
    h: float = 0.01
    terminal_weight: float = 1.0
    floor: float = 1e-6
    hidden: int = 32
    layers: tuple[int, ...] = (64, 64, 64)
    x_scale: float = 0.25

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))

    def solver(self) -> hjb.SolverConfig:
        n = self.days + 1
        return hjb.SolverConfig(
            gamma=self.gamma, z=self.z, M=self.M, N=n, T=n * DT_DAY, h=self.h,
            terminal_weight=self.terminal_weight, floor=self.floor,
            outer_rounds=self.outer_rounds, epochs=self.epochs, lr=self.lr,
            hidden=self.hidden, layers=self.layers, x_scale=self.x_scale,
        )


@dataclass
class WealthLedger:
    tickers: list[str]
    start_day: int
    wealth: list[float] = field(default_factory=lambda: list(SEED_PATH))
    holdings: list[np.ndarray] = field(default_factory=list)
    policies: list[GaussianPolicy] = field(default_factory=list)
    realized: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    theta: NetworkParams | None = None

    @property
    def days_done(self) -> int:
        return len(self.holdings)

    @property
    def d(self) -> int:
        return len(self.tickers)

    def path(self) -> PathGrid:
        return PathGrid(np.array(self.wealth), DT_DAY)

    def check(self) -> None:
        if len(self.wealth) != 2 + self.days_done:
            raise BacktestError("wealth path length does not match completed days")
        if tuple(self.wealth[:2]) != SEED_PATH:
            raise BacktestError("wealth path must start with the seed points")
        if any(a.shape != (self.d,) for a in self.holdings):
            raise BacktestError("holdings dimension does not match the asset count")


def _day_seed(seed: int, day: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(day), int(stream)])


def choose_assets(panel: PricePanel, start_day: int, cfg: BacktestConfig) -> list[str]:
    """Tradable tickers: the first ``d`` non-benchmark columns, or cluster representatives.

    Clustering uses only returns observable before ``start_day``.
    """
    names = [t for t in panel.tickers if t != cfg.benchmark]
    if not cfg.cluster:
        return names[: cfg.d]
    cols = [panel.tickers.index(t) for t in names]
    hist = to_returns(panel)[max(0, start_day - cfg.window):start_day, cols]
    S = similarity_matrix(hist, SimilarityConfig(), names)
    k_max = max(2, min(cfg.d, len(names)))
    res = best_of_restarts(S, AnnealConfig(k_max=k_max, restarts=10, seed=cfg.seed))
    reps = select_representatives(res.partition, np.random.default_rng(_day_seed(cfg.seed, start_day, 9)))
    return [names[i] for i in reps]


def run_day(ledger: WealthLedger, panel: PricePanel, day: int, cfg: BacktestConfig) -> WealthLedger:
    """Advance the ledger by one trading day (in place) and return it.

    ``day`` indexes ``panel.dates``: parameters use returns up to the close
    of ``dates[day]`` and the realized move is ``dates[day] -> dates[day + 1]``.
    """
    cols = [panel.tickers.index(t) for t in ledger.tickers]
    returns = to_returns(panel)[:, cols]
    if day >= returns.shape[0]:
        raise BacktestError(f"no realized return after day {day}")
    try:
        params = estimate_params(returns, day, cfg.window, cfg.r)
    except EstimationError as exc:
        raise BacktestError(f"day {day}: {exc}") from exc

    path = ledger.path()
    x = path.x
    R = returns[day]
    diag: dict = {"day": day}
    if cfg.zero_holdings:
        a = np.zeros(ledger.d)
        pol = None
    else:
        scfg = cfg.solver()
        theta0 = ledger.theta if cfg.warm_start else None
        seed = int(_day_seed(cfg.seed, day, 0).generate_state(1)[0])
        try:
            theta, rep = hjb.train(path, params, scfg, seed=seed, theta0=theta0)
        except (hjb.TrainingDivergence, ValueError, np.linalg.LinAlgError) as exc:
            raise BacktestError(f"day {day}: training failed: {exc}") from exc
        ledger.theta = theta
        times = np.append(path.times, path.t + DT_DAY)
        _, dx, dxx = hjb.tip_derivs(hjb.NetworkFunctional(theta), times, path.values[None, :], scfg.h, DT_DAY)
        dx, dxx = float(dx[0]), float(dxx[0])
        pol = optimal_policy(params, dx, dxx, cfg.gamma, cfg.floor)
        a = sample(pol, np.random.default_rng(_day_seed(cfg.seed, day, 1)))
        diag.update(
            dx=dx, dxx=dxx, w=rep.final_w, loss=rep.final_loss,
            floored_fraction=rep.floored_fraction,
        )
    dx_wealth = float(a @ (R - cfg.r * DT_DAY))
    x_new = x + dx_wealth
    if not math.isfinite(x_new):
        raise BacktestError(f"day {day}: wealth update is not finite")
    # direct recomputation of the self-financing update
    direct = x + sum(float(ai) * (float(ri) - cfg.r * DT_DAY) for ai, ri in zip(a, R))
    if not math.isclose(direct, x_new, rel_tol=1e-9, abs_tol=1e-12):
        raise BacktestError(f"day {day}: wealth update mismatch {x_new} vs {direct}")

    ledger.wealth.append(x_new)
    ledger.holdings.append(np.asarray(a, dtype=float))
    if pol is not None:
        ledger.policies.append(pol)
    ledger.realized.append(np.asarray(R, dtype=float))
    ledger.diagnostics.append(diag)
    ledger.check()
    logger.info("day %d: wealth %.6f", day, x_new)
    return ledger


def benchmark_series(panel: PricePanel, column: str, start_day: int, days: int) -> np.ndarray:
    """Buy-and-hold value of ``column`` from ``dates[start_day]``, normalized to 1."""
    p = panel.column(column)[start_day:start_day + days + 1]
    return p / p[0]


def run(panel: PricePanel, start_day: int, cfg: BacktestConfig) -> tuple[WealthLedger, np.ndarray | None]:
    if start_day < cfg.window:
        raise BacktestError(f"start_day {start_day} leaves fewer than window={cfg.window} returns")
    if start_day + cfg.days > panel.n_dates - 1:
        raise BacktestError(
            f"need {start_day + cfg.days + 1} dates for {cfg.days} days from day {start_day}, "
            f"panel has {panel.n_dates}"
        )
    if cfg.benchmark is not None and cfg.benchmark not in panel.tickers:
        raise BacktestError(f"benchmark column {cfg.benchmark!r} not in the panel")
    tickers = choose_assets(panel, start_day, cfg)
    if not tickers:
        raise BacktestError("no tradable assets")
    ledger = WealthLedger(tickers, start_day)
    for day in range(start_day, start_day + cfg.days):
        run_day(ledger, panel, day, cfg)
    bench = benchmark_series(panel, cfg.benchmark, start_day, cfg.days) if cfg.benchmark else None
    return ledger, bench


# -- reporting ----------------------------------------------------------------

def max_drawdown(x) -> float:
    x = np.asarray(x, dtype=float)
    peak = np.maximum.accumulate(x)
    return float(np.max(1.0 - x / peak))


def metrics(x) -> dict:
    """Total return, daily simple-return volatility (ddof 1) and max drawdown."""
    x = np.asarray(x, dtype=float)
    rets = x[1:] / x[:-1] - 1.0
    return {
        "total_return": float(x[-1] / x[0] - 1.0),
        "daily_volatility": float(np.std(rets, ddof=1)) if rets.size > 1 else 0.0,
        "max_drawdown": max_drawdown(x),
    }


def report(ledger: WealthLedger, benchmark, out_dir, dates=None) -> dict[str, Path]:
    """Write ``wealth.csv``, ``holdings.csv``, ``metrics.json`` and ``wealth.svg``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BacktestError(f"cannot create output directory {out}: {exc}") from exc
    wealth = np.array(ledger.wealth)
    bench = None if benchmark is None else np.asarray(benchmark, dtype=float)
    files = {}

    files["wealth"] = out / "wealth.csv"
    with files["wealth"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "date", "wealth", "benchmark"])
        for i, x in enumerate(wealth):
            date = dates[ledger.start_day + i - 1].isoformat() if dates is not None and i >= 1 else ""
            b = repr(float(bench[i - 1])) if bench is not None and 1 <= i <= bench.size else ""
            w.writerow([i, date, repr(float(x)), b])

    files["holdings"] = out / "holdings.csv"
    with files["holdings"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", *ledger.tickers])
        for j, a in enumerate(ledger.holdings):
            w.writerow([ledger.start_day + j, *(repr(float(v)) for v in a)])

    m = {"strategy": metrics(wealth), "days": ledger.days_done, "tickers": ledger.tickers}
    if bench is not None:
        m["benchmark"] = metrics(bench)
    m["diagnostics"] = ledger.diagnostics
    files["metrics"] = out / "metrics.json"
    files["metrics"].write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")

    files["chart"] = out / "wealth.svg"
    _chart(wealth, bench, files["chart"])
    return files


def _chart(wealth, bench, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "pathmv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(np.arange(wealth.size), wealth, label="strategy")
        if bench is not None:
            ax.plot(np.arange(1, bench.size + 1), bench, label="benchmark")
        ax.set_xlabel("step")
        ax.set_ylabel("wealth")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def config_dict(cfg: BacktestConfig) -> dict:
    d = asdict(cfg)
    d["layers"] = list(cfg.layers)
    return d

