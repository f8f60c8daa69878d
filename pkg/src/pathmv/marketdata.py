"""Price ingestion, simple returns and rolling drift/covariance estimation."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

#: Trading days per year; every per-day quantity is annualized with it.
TRADING_DAYS = 252
DT_DAY = 1.0 / TRADING_DAYS


class DataError(ValueError):
    """Raised when a price file or panel cannot be used."""


class EstimationError(ValueError):
    """Raised when model parameters cannot be estimated from a window."""


@dataclass(frozen=True)
class PricePanel:
    """Daily adjusted closes, one column per asset.

    Parameters
    ----------
    tickers : list of str
        Asset identifiers, in column order.
    dates : list of datetime.date
        Strictly increasing trading dates.
    prices : ndarray of shape (n_dates, n_assets)
        Positive prices.
    excluded : dict
        Tickers dropped at load time mapped to the reason.
    """

    tickers: list[str]
    dates: list[_dt.date]
    prices: np.ndarray
    excluded: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2:
            raise DataError("prices must be a 2-D array")
        if prices.shape != (len(self.dates), len(self.tickers)):
            raise DataError(
                f"prices shape {prices.shape} does not match "
                f"{len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if len(self.dates) < 2:
            raise DataError("need at least 2 dates")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise DataError("all prices must be finite and positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "prices", prices)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def column(self, ticker: str) -> np.ndarray:
        return self.prices[:, self.tickers.index(ticker)]

    def select(self, tickers) -> "PricePanel":
        """Sub-panel restricted to ``tickers`` (in the given order)."""
        idx = [self.tickers.index(t) for t in tickers]
        return PricePanel(list(tickers), list(self.dates), self.prices[:, idx])

    def drop(self, tickers) -> "PricePanel":
        keep = [t for t in self.tickers if t not in set(tickers)]
        return self.select(keep)


@dataclass(frozen=True)
class ModelParams:
    """Per-day market model: annualized drift, volatility factor and covariance."""

    mu: np.ndarray
    sigma: np.ndarray
    Sigma: np.ndarray
    r: float = 0.0

    @property
    def d(self) -> int:
        return int(self.mu.shape[0])

    @property
    def excess(self) -> np.ndarray:
        """Excess drift ``mu - r``."""
        return self.mu - self.r

    @classmethod
    def from_cov(cls, mu, Sigma, r: float = 0.0) -> "ModelParams":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        try:
            sigma = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("covariance is not positive definite") from exc
        return cls(mu=mu, sigma=sigma, Sigma=Sigma, r=float(r))

    @classmethod
    def constant(cls, mu, vol, r: float = 0.0) -> "ModelParams":
        """Single-asset convenience constructor from drift and volatility."""
        vol = float(vol)
        return cls.from_cov([float(mu)], [[vol * vol]], r)


def _parse_date(text: str) -> _dt.date:
    try:
        return _dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"bad ISO-8601 date {text!r}") from exc


def load_prices(path, stream=None) -> PricePanel:
    """Read a ``date,TICKER1,TICKER2,...`` CSV into a :class:`PricePanel`.

    Assets with any missing, unparsable or non-positive price are dropped;
    one line per dropped asset is written to ``stream`` (stderr by default).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    tickers = [h.strip() for h in header[1:]]
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 dates, found {len(body)}")

    dates = [_parse_date(r[0]) for r in body]
    values = np.full((len(body), len(tickers)), np.nan)
    for i, row in enumerate(body):
        for j, cell in enumerate(row[1 : len(tickers) + 1]):
            try:
                values[i, j] = float(cell) if cell.strip() else np.nan
            except ValueError:
                values[i, j] = np.nan

    excluded = {}
    for j, t in enumerate(tickers):
        col = values[:, j]
        if np.any(~np.isfinite(col)):
            excluded[t] = "missing price"
        elif np.any(col <= 0):
            excluded[t] = "non-positive price"
    keep = [j for j, t in enumerate(tickers) if t not in excluded]

    stream = sys.stderr if stream is None else stream
    for t, reason in excluded.items():
        print(f"excluded {t}: {reason}", file=stream)
    if not keep:
        raise DataError(f"{path}: no asset survived validation")
    return PricePanel(
        tickers=[tickers[j] for j in keep],
        dates=dates,
        prices=values[:, keep],
        excluded=excluded,
    )


def write_prices(path, panel: PricePanel) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *panel.tickers])
        for d, row in zip(panel.dates, panel.prices):
            w.writerow([d.isoformat(), *(repr(float(p)) for p in row)])


def to_returns(panel: PricePanel) -> np.ndarray:
    """Simple returns, shape ``(n_dates - 1, n_assets)``.

    Row ``k`` is the return realized from ``dates[k]`` to ``dates[k + 1]``.
    """
    p = panel.prices
    return p[1:] / p[:-1] - 1.0


def cumulative_return(x) -> float:
    """Growth factor ``prod(1 + x_i)``; 1.0 for an empty series."""
    return float(np.prod(1.0 + np.asarray(x, dtype=float)))


def estimate_params(
    panel_or_returns,
    day: int,
    window: int = 75,
    r: float = 0.0,
    ridge: float | None = None,
) -> ModelParams:
    """Annualized drift and covariance from the ``window`` returns before ``day``.

    Uses returns ``day - window .. day - 1``, i.e. everything observable at
    the close of ``dates[day]``. ``ridge`` is added to the covariance
    diagonal; ``None`` means ``1e-6`` times its mean diagonal.
    """
    returns = (
        to_returns(panel_or_returns)
        if isinstance(panel_or_returns, PricePanel)
        else np.asarray(panel_or_returns, dtype=float)
    )
    if returns.ndim == 1:
        returns = returns[:, None]
    if window < 2:
        raise EstimationError("window must be at least 2")
    if day < window:
        raise EstimationError(f"day {day} has fewer than window={window} returns behind it")
    if day > returns.shape[0]:
        raise EstimationError(f"day {day} is past the end of the return history")

    block = returns[day - window : day]
    mu = TRADING_DAYS * block.mean(axis=0)
    cov = TRADING_DAYS * np.atleast_2d(np.cov(block, rowvar=False, ddof=1))
    if ridge is None:
        ridge = 1e-6 * float(np.mean(np.diag(cov)))
    Sigma = cov + ridge * np.eye(cov.shape[0])
    try:
        sigma = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(
            f"covariance at day {day} is not positive definite after ridge={ridge:g}"
        ) from exc
    return ModelParams(mu=mu, sigma=sigma, Sigma=Sigma, r=float(r))


def synthetic_panel(
    n_assets: int,
    n_days: int,
    seed: int = 0,
    n_factors: int = 3,
    mu_scale: float = 0.08,
    vol: float = 0.25,
    benchmark: str | None = "INDEX",
    start: _dt.date = _dt.date(2021, 1, 4),
) -> PricePanel:
    """Factor-model GBM panel for demos and tests.

    Assets load on one of ``n_factors`` latent factors plus idiosyncratic
    noise. With ``benchmark`` set, an equal-weight index column is appended.
    """
    rng = np.random.default_rng(seed)
    groups = np.arange(n_assets) % n_factors
    mu = rng.normal(mu_scale, mu_scale, size=n_assets)
    f = rng.standard_normal((n_days - 1, n_factors))
    e = rng.standard_normal((n_days - 1, n_assets))
    z = 0.8 * f[:, groups] + 0.6 * e
    daily = (mu - 0.5 * vol**2) * DT_DAY + vol * np.sqrt(DT_DAY) * z
    logp = np.vstack([np.zeros(n_assets), np.cumsum(daily, axis=0)])
    prices = 100.0 * np.exp(logp)
    tickers = [f"A{j:03d}" for j in range(n_assets)]
    if benchmark:
        rets = prices[1:] / prices[:-1] - 1.0
        idx = np.concatenate([[100.0], 100.0 * np.cumprod(1.0 + rets.mean(axis=1))])
        prices = np.column_stack([prices, idx])
        tickers.append(benchmark)
    dates, d = [], start
    while len(dates) < n_days:
        if d.weekday() < 5:
            dates.append(d)
        d += _dt.timedelta(days=1)
    return PricePanel(tickers, dates, prices)
