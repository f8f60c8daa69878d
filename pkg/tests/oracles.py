"""Independent reference computations shared by several test modules."""

import math
from dataclasses import replace

import numpy as np

from pathmv import hjb_solver as hjb
from pathmv.marketdata import ModelParams
from pathmv.nn import network as net
from pathmv.nn import tape as T


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_loop(xs, Wx, Wh, b):
    """Scalar-loop LSTM over standardized inputs; returns hidden states per step."""
    H = Wh.shape[0]
    h = [0.0] * H
    c = [0.0] * H
    out = []
    for x in xs:
        z = [Wx[0, j] * x + sum(h[i] * Wh[i, j] for i in range(H)) + b[j] for j in range(4 * H)]
        new_h, new_c = [], []
        for j in range(H):
            ig, fg = sigmoid(z[j]), sigmoid(z[H + j])
            og, gg = sigmoid(z[2 * H + j]), math.tanh(z[3 * H + j])
            cj = fg * c[j] + ig * gg
            new_c.append(cj)
            new_h.append(og * math.tanh(cj))
        h, c = new_h, new_c
        out.append(list(h))
    return np.array(out)


def mlp_loop(inp, weights, biases):
    z = list(inp)
    for n, (W, bias) in enumerate(zip(weights, biases)):
        z = [sum(z[i] * W[i, j] for i in range(W.shape[0])) + bias[j] for j in range(W.shape[1])]
        if n < len(weights) - 1:
            z = [math.tanh(v) for v in z]
    return z[0]


def value_loop(times, values, theta):
    """Network value at the tip of one path, composed from the scalar oracles."""
    std = [(v - theta.x_center) / theta.x_scale for v in values]
    H = theta.hidden
    a = lstm_loop(std[:-1], theta.lstm.Wx, theta.lstm.Wh, theta.lstm.b)[-1] if len(values) > 1 else np.zeros(H)
    inp = [times[len(values) - 1] / theta.horizon, std[-1], *a]
    u = mlp_loop(inp, theta.mlp.weights, theta.mlp.biases)
    if theta.payoff_w is not None:
        x = values[-1]
        u += (x - theta.payoff_w) ** 2 - (theta.payoff_w - theta.payoff_z) ** 2
    return u


def gradient_check(seed, h=0.05, eps=1e-5, M=3, N=4):
    """Max per-coordinate relative error of the tape gradient of the training loss.

    Parameters are a small network with a mild random perturbation and the
    payoff baseline on, so curvature stays above the floor and the loss is
    smooth.
    """
    g = np.random.default_rng(seed)
    theta = net.init_params(4, (8, 8), 1.0, 1.0, 0.25, seed)
    theta = theta.with_flat(theta.flat() + g.normal(0.0, 0.05, theta.size))
    theta = replace(theta, payoff_w=1.3, payoff_z=1.1)
    cfg = hjb.SolverConfig(M=M, N=N, h=h, hidden=4, layers=(8, 8))
    k = hjb.constants(ModelParams.constant(0.1, 0.2), 0.01)
    vals = 1.0 + np.cumsum(g.normal(0.0, 0.05, (M, N + 1)), axis=1)
    vals[:, 0] = 1.0
    times = np.linspace(0.0, 1.0, N + 1)

    def f(vec):
        L, _ = hjb.batched_loss(theta.with_flat(vec), vals, times, k, cfg, 1.3)
        return float(L)

    vs, view = net.leaves(theta)
    L, n_floored = hjb.batched_loss(view, vals, times, k, cfg, 1.3)
    assert n_floored == 0
    gr = np.concatenate([np.ravel(x) for x in T.grad(L, vs)])
    x = theta.flat()
    fd = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fd[i] = (f(xp) - f(xm)) / (2 * eps)
    rel = np.abs(gr - fd) / np.maximum(np.maximum(np.abs(gr), np.abs(fd)), 1e-6)
    return float(rel.max())


class Quadratic:
    """Stub functional ``x_k^2``."""

    def values(self, times, values):
        return np.atleast_2d(values)[:, -1] ** 2


class TimesX:
    """Stub functional ``t_k x_k``."""

    def values(self, times, values):
        v = np.atleast_2d(values)
        return times[v.shape[1] - 1] * v[:, -1]


class Poly:
    """Stub ``a t_k + b x_k + c x_k^2 + e x_k^3``; exact derivatives are known."""

    def __init__(self, a, b, c, e=0.0):
        self.a, self.b, self.c, self.e = a, b, c, e

    def values(self, times, values):
        v = np.atleast_2d(values)
        t = times[v.shape[1] - 1]
        x = v[:, -1]
        return self.a * t + self.b * x + self.c * x**2 + self.e * x**3

    def dx(self, x):
        return self.b + 2 * self.c * x + 3 * self.e * x**2
