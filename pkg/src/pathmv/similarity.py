"""Hybrid return similarity: cumulative-return distance mixed with uncentered correlation.

For return series ``x`` and ``y`` of equal length::

    sim(x, y) = w / (1 + e(x, y)) + (1 - w) * tau(x, y)
    e(x, y)   = |prod(1 + x) - prod(1 + y)|
    tau(x, y) = <x, y> / (|x| |y|)

``tau`` alone cannot tell apart a series from a scaled copy of itself; the
``e`` term can, because the two compound to different terminal values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DegenerateSeriesError(ValueError):
    """A zero-norm return series was passed where ``tau`` is needed."""

    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(message or f"zero-norm return series at index {self.indices}")


@dataclass(frozen=True)
class SimilarityConfig:
    sim_w: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.sim_w <= 1.0:
            raise ValueError(f"sim_w must lie in [0, 1], got {self.sim_w}")


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be 1-D with equal lengths, got {x.shape} and {y.shape}")
    return x, y


def cum_distance(x, y) -> float:
    """Absolute gap between the two compounded growth factors."""
    x, y = _pair(x, y)
    return float(abs(np.prod(1.0 + x) - np.prod(1.0 + y)))


def _unit_scale(x):
    # dividing by max |x| keeps the squared norm away from underflow
    m = float(np.max(np.abs(x))) if x.size else 0.0
    return x / m if m > 0 else None


def tau(x, y) -> float:
    x, y = _pair(x, y)
    xs, ys = _unit_scale(x), _unit_scale(y)
    bad = [i for i, v in enumerate((xs, ys)) if v is None]
    if bad:
        raise DegenerateSeriesError(bad)
    nx, ny = float(np.dot(xs, xs)), float(np.dot(ys, ys))
    # sqrt(nx * ny) rather than sqrt(nx) * sqrt(ny): gives exactly 1 for x == y
    t = float(np.dot(xs, ys)) / np.sqrt(nx * ny)
    return float(min(1.0, max(-1.0, t)))


def _combine(e, t, w):
    # algebraically w/(1+e) + (1-w)*t; this form keeps sim(x, x) == 1 exactly
    return np.minimum(t + w * (1.0 / (1.0 + e) - t), 1.0)


def sim(x, y, cfg: SimilarityConfig | None = None) -> float:
    """Similarity of two return series; 1 for identical nonzero series."""
    w = (cfg or SimilarityConfig()).sim_w
    return float(_combine(cum_distance(x, y), tau(x, y), w))


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    tickers: list[str] | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        names = self.tickers or [str(i) for i in range(self.n)]
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["", *names])
            for name, row in zip(names, self.values):
                wr.writerow([name, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "SimilarityMatrix":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][1:]
        vals = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
        return cls(vals, names)


def similarity_matrix(series, cfg: SimilarityConfig | None = None, tickers=None) -> SimilarityMatrix:
    """All-pairs similarity for the columns of ``series`` (shape ``(T, n)``).

    ``series`` may also be a list of 1-D return arrays. Each unordered pair
    is evaluated once and mirrored, so the result is exactly symmetric.
    """
    w = (cfg or SimilarityConfig()).sim_w
    if isinstance(series, np.ndarray) and series.ndim == 2:
        R = np.asarray(series, dtype=float)
    else:
        cols = [np.asarray(s, dtype=float) for s in series]
        if len({c.shape for c in cols}) > 1:
            raise ValueError("all series must have the same length")
        R = np.column_stack(cols)
    n = R.shape[1]
    if n < 2:
        raise ValueError("need at least two series")

    scale = np.max(np.abs(R), axis=0) if R.shape[0] else np.zeros(n)
    bad = np.flatnonzero(scale == 0.0)
    if bad.size:
        raise DegenerateSeriesError(bad.tolist())

    growth = np.prod(1.0 + R, axis=0)
    iu, ju = np.triu_indices(n, k=1)
    X, Y = R[:, iu] / scale[iu], R[:, ju] / scale[ju]
    # identical operations for norms and dots, so equal columns give exactly 1
    nx = np.einsum("ti,ti->i", X, X)
    ny = np.einsum("ti,ti->i", Y, Y)
    dots = np.einsum("ti,ti->i", X, Y)
    t = np.clip(dots / np.sqrt(nx * ny), -1.0, 1.0)
    e = np.abs(growth[iu] - growth[ju])

    S = np.ones((n, n))
    S[iu, ju] = _combine(e, t, w)
    S[ju, iu] = S[iu, ju]
    return SimilarityMatrix(S, list(tickers) if tickers is not None else None)
