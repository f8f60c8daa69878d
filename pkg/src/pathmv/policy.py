"""Gaussian exploratory policies over dollar holdings.

Given the value functional's first and second wealth derivatives ``dx`` and
``dxx`` at a path, the entropy-regularized optimum is the normal law::

    mean = -Sigma^{-1} (mu - r) * dx / dxx
    cov  =  Sigma^{-1} * gamma / dxx

with ``dxx`` clamped below by a small floor so the covariance stays
positive definite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .marketdata import ModelParams

LOG_2PIE = math.log(2.0 * math.pi * math.e)


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianPolicy:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_moments(cls, mean, cov) -> "GaussianPolicy":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise PolicyError("policy covariance is not positive definite") from exc
        return cls(mean, cov, chol)

    @property
    def d(self) -> int:
        return int(self.mean.size)

    def log_density(self, a) -> np.ndarray:
        """Log of the normal density at holdings ``a`` (shape ``(d,)`` or ``(n, d)``)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        z = np.linalg.solve(self.chol, (a - self.mean).T)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (self.d * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0))

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "cov": self.cov.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GaussianPolicy":
        obj = json.loads(text)
        return cls.from_moments(obj["mean"], obj["cov"])


@dataclass(frozen=True)
class PolicyBatch:
    """One Gaussian policy per path: ``mean`` is ``(B, d)``, ``cov`` is ``(B, d, d)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __len__(self):
        return self.mean.shape[0]

    def trace_term(self, params: ModelParams) -> np.ndarray:
        """``Tr(Sigma^T C)`` per path."""
        return np.einsum("ij,bij->b", params.Sigma, self.cov)

    def drift(self, params: ModelParams) -> np.ndarray:
        return self.mean @ params.excess

    def vol_sq(self, params: ModelParams) -> np.ndarray:
        quad = np.einsum("bi,ij,bj->b", self.mean, params.Sigma, self.mean)
        return quad + self.trace_term(params)

    def entropy_cost(self) -> np.ndarray:
        d = self.mean.shape[1]
        _, logdet = np.linalg.slogdet(self.cov)
        return -0.5 * d * LOG_2PIE - 0.5 * logdet

    def __getitem__(self, i) -> GaussianPolicy:
        return GaussianPolicy.from_moments(self.mean[i], self.cov[i])


def _inv_sigma(params: ModelParams) -> np.ndarray:
    try:
        inv = cho_solve((params.sigma, True), np.eye(params.d))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise PolicyError("covariance is singular") from exc
    if not np.all(np.isfinite(inv)):
        raise PolicyError("covariance is singular")
    return 0.5 * (inv + inv.T)


def merton_direction(params: ModelParams) -> np.ndarray:
    """``Sigma^{-1} (mu - r)``."""
    return cho_solve((params.sigma, True), params.excess)


def optimal_policy(
    params: ModelParams, dx: float, dxx: float, gamma: float, floor: float = 1e-6
) -> GaussianPolicy:
    c = max(float(dxx), floor)
    inv = _inv_sigma(params)
    mean = -(inv @ params.excess) * (float(dx) / c)
    return GaussianPolicy.from_moments(mean, inv * (gamma / c))


def optimal_policy_batch(params: ModelParams, dx, dxx, gamma: float, floor: float = 1e-6) -> PolicyBatch:
    """Vectorized :func:`optimal_policy` over arrays of derivatives."""
    dx = np.asarray(dx, dtype=float)
    c = np.maximum(np.asarray(dxx, dtype=float), floor)
    inv = _inv_sigma(params)
    mean = -np.outer(dx / c, inv @ params.excess)
    cov = (gamma / c)[:, None, None] * inv[None]
    return PolicyBatch(mean, cov)


def bootstrap_policy(params: ModelParams, gamma: float) -> GaussianPolicy:
    """Zero-mean exploration with the optimal covariance at unit curvature."""
    inv = _inv_sigma(params)
    return GaussianPolicy.from_moments(np.zeros(params.d), gamma * inv)


def sample(pol: GaussianPolicy, rng, size: int | None = None) -> np.ndarray:
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if size is None:
        return pol.mean + pol.chol @ gen.standard_normal(pol.d)
    return pol.mean + gen.standard_normal((size, pol.d)) @ pol.chol.T


def entropy_cost(pol: GaussianPolicy) -> float:
    """Negative differential entropy, ``int pi log pi``."""
    logdet = 2.0 * float(np.sum(np.log(np.diag(pol.chol))))
    return -0.5 * pol.d * LOG_2PIE - 0.5 * logdet


def exploratory_coeffs(pol: GaussianPolicy, params: ModelParams) -> tuple[float, float]:
    """Drift and squared diffusion of the averaged wealth process under ``pol``."""
    drift = float(params.excess @ pol.mean)
    vol_sq = float(pol.mean @ params.Sigma @ pol.mean + np.trace(params.Sigma.T @ pol.cov))
    return drift, vol_sq


def hamiltonian_integrand(a, params: ModelParams, dx: float, dxx: float) -> np.ndarray:
    """``(mu - r)^T a dx + a^T Sigma a dxx / 2`` for holdings ``a`` (rows)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return (a @ params.excess) * dx + 0.5 * np.einsum("ni,ij,nj->n", a, params.Sigma, a) * dxx
