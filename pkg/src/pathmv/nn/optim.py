"""Adaptive-moment optimizer on flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def opt_step(theta, g, state: AdamState, lr: float = 1e-3):
    """One bias-corrected Adam update; returns ``(theta', state')``.

    ``theta`` and ``g`` are flat arrays. The input state is not modified.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
