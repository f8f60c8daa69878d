"""Reverse-mode differentiation over numpy arrays.

A :class:`Var` records its parents and a vector-Jacobian product; ``grad``
walks the graph once in reverse topological order. The module-level ops
accept plain arrays too and then just compute the value, so forward code
can be shared between the training graph and fast inference.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "parents", "vjp")
    __array_ufunc__ = None  # make ndarray operators defer to Var

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(value, parents, vjp):
    live = tuple(p for p in parents if isinstance(p, Var))
    if not live:
        return value
    return Var(value, parents, vjp)


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    return _make(out, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv))))


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    return _make(out, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), -_unbroadcast(g, np.shape(bv))))


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    return _make(
        out, (a, b),
        lambda g: (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv))),
    )


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(
        out, (a, b),
        lambda g: (_unbroadcast(g / bv, np.shape(av)), _unbroadcast(-g * out / bv, np.shape(bv))),
    )


def matmul(a, b):
    """``a @ b`` with ``b`` two-dimensional; ``a`` may carry leading batch axes."""
    av, bv = _val(a), _val(b)
    out = av @ bv

    def vjp(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(out, (a, b), vjp)


def tanh(x):
    out = np.tanh(_val(x))
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    v = _val(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * v))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def log(x):
    v = _val(x)
    return _make(np.log(v), (x,), lambda g: (g / v,))


def square(x):
    v = _val(x)
    return _make(v * v, (x,), lambda g: (2.0 * g * v,))


def maximum(x, floor: float):
    """Elementwise ``max(x, floor)``; no gradient flows where the floor is active."""
    v = _val(x)
    mask = v >= floor
    return _make(np.where(mask, v, floor), (x,), lambda g: (g * mask,))


def sum_(x, axis=None):
    v = _val(x)
    out = v.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, v.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), v.shape).copy(),)

    return _make(out, (x,), vjp)


def mean(x):
    v = _val(x)
    return _make(v.mean(), (x,), lambda g: (np.full(v.shape, g / v.size),))


def reshape(x, shape):
    v = _val(x)
    return _make(v.reshape(shape), (x,), lambda g: (g.reshape(v.shape),))


def getitem(x, idx):
    v = _val(x)

    def vjp(g):
        out = np.zeros_like(v)
        np.add.at(out, idx, g)
        return (out,)

    return _make(v[idx], (x,), vjp)


def stack(xs, axis=0):
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _make(out, tuple(xs), vjp)


def concat(xs, axis=0):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(xs), vjp)


def grad(loss: Var, wrt):
    """Gradients of scalar ``loss`` with respect to each leaf in ``wrt``.

    Leaves not reached from ``loss`` get zero gradients.
    """
    wrt = list(wrt)
    if not isinstance(loss, Var):
        return [np.zeros_like(w.value) for w in wrt]

    order, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack_.append((p, False))

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node.vjp is not None else grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if not isinstance(p, Var):
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return [grads.get(id(w), np.zeros_like(w.value)) for w in wrt]
