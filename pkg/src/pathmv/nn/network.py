"""LSTM path encoder with a feedforward value head.

The value of a discretized path ``x_0..x_k`` is ``phi(t_k, x_k, a_{k-1})``
where ``a_j`` is the LSTM hidden state after reading ``x_0..x_j`` and
``a_{-1} = 0``. Time enters as ``t / horizon`` and wealth as
``(x - x_center) / x_scale``.

When ``payoff_w`` is set, the fixed quadratic ``(x_k - w)^2 - (w - z)^2``
is added to the head output, so the network learns a correction to the
mean-variance terminal payoff rather than the whole value.

All forward functions go through :mod:`.tape` ops, so they evaluate either
plain arrays (fast inference) or :class:`~.tape.Var` leaves (training).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tape as T

MAGIC = b"PATHMV-NET-1\n"
GATES = ("input", "forget", "output", "candidate")


@dataclass
class LstmParams:
    """Gate parameters stacked as ``[input | forget | output | candidate]``.

    ``Wx`` is ``(1, 4H)``, ``Wh`` is ``(H, 4H)``, ``b`` is ``(4H,)``.
    """

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return int(self.Wh.shape[0])

    def arrays(self) -> list:
        return [self.Wx, self.Wh, self.b]


@dataclass
class MlpParams:
    """Dense tanh layers with a linear scalar output.

    The first weight matrix has ``2 + H`` rows: time, wealth, then the
    path summary.
    """

    weights: list
    biases: list

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


@dataclass
class NetworkParams:
    lstm: LstmParams
    mlp: MlpParams
    horizon: float = 1.0
    x_center: float = 1.0
    x_scale: float = 0.25
    payoff_w: float | None = None
    payoff_z: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        H = self.lstm.hidden
        if self.lstm.Wx.shape != (1, 4 * H) or self.lstm.b.shape != (4 * H,):
            raise ValueError("inconsistent LSTM shapes")
        W0 = self.mlp.weights[0]
        if W0.shape[0] != 2 + H:
            raise ValueError(f"first MLP layer expects {2 + H} inputs, got {W0.shape[0]}")
        for W, W_next in zip(self.mlp.weights, self.mlp.weights[1:]):
            if W.shape[1] != W_next.shape[0]:
                raise ValueError("MLP layer shapes do not chain")
        if self.mlp.weights[-1].shape[1] != 1:
            raise ValueError("MLP output must be scalar")
        if not (self.horizon > 0 and self.x_scale > 0):
            raise ValueError("horizon and x_scale must be positive")

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    @property
    def layers(self) -> tuple[int, ...]:
        return tuple(W.shape[1] for W in self.mlp.weights[:-1])

    def arrays(self) -> list:
        return self.lstm.arrays() + self.mlp.arrays()

    def with_arrays(self, arrays) -> "NetworkParams":
        arrays = list(arrays)
        lstm = LstmParams(*arrays[:3])
        rest = arrays[3:]
        mlp = MlpParams(list(rest[0::2]), list(rest[1::2]))
        return replace(self, lstm=lstm, mlp=mlp)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in self.arrays()])

    def with_flat(self, vec) -> "NetworkParams":
        vec = np.asarray(vec, dtype=float)
        out, i = [], 0
        for a in self.arrays():
            out.append(vec[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        if i != vec.size:
            raise ValueError(f"expected {i} parameters, got {vec.size}")
        return self.with_arrays(out)

    def baseline(self, x):
        """Fixed payoff term added to the head output (zero when disabled)."""
        x = np.asarray(x, dtype=float)
        if self.payoff_w is None:
            return np.zeros_like(x)
        return (x - self.payoff_w) ** 2 - (self.payoff_w - self.payoff_z) ** 2

    def copy(self) -> "NetworkParams":
        return self.with_arrays([np.array(a, dtype=float) for a in self.arrays()])

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def save(self, path) -> None:
        """Binary dump: magic line, 8-byte header length, JSON header, float64 LE data."""
        header = {
            "hidden": self.hidden,
            "layers": list(self.layers),
            "horizon": self.horizon,
            "x_center": self.x_center,
            "x_scale": self.x_scale,
            "payoff_w": self.payoff_w,
            "payoff_z": self.payoff_z,
            "shapes": [list(a.shape) for a in self.arrays()],
            "meta": self.meta,
        }
        raw = json.dumps(header, sort_keys=True).encode()
        with Path(path).open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "NetworkParams":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path}: not a network parameter file")
        off = len(MAGIC)
        (n,) = struct.unpack("<Q", data[off:off + 8])
        header = json.loads(data[off + 8:off + 8 + n])
        vec = np.frombuffer(data[off + 8 + n:], dtype="<f8").astype(float)
        arrays, i = [], 0
        for shape in header["shapes"]:
            size = int(np.prod(shape))
            arrays.append(vec[i:i + size].reshape(shape).copy())
            i += size
        if i != vec.size:
            raise ValueError(f"{path}: parameter block has the wrong length")
        lstm = LstmParams(*arrays[:3])
        rest = arrays[3:]
        return cls(
            lstm, MlpParams(list(rest[0::2]), list(rest[1::2])),
            horizon=header["horizon"], x_center=header["x_center"],
            x_scale=header["x_scale"], payoff_w=header.get("payoff_w"),
            payoff_z=header.get("payoff_z", 0.0), meta=header.get("meta", {}),
        )


def init_params(
    hidden: int = 32,
    layers=(64, 64, 64),
    horizon: float = 1.0,
    x_center: float = 1.0,
    x_scale: float = 0.25,
    seed=0,
) -> NetworkParams:
    """Uniform ``+-1/sqrt(fan_in)`` weights; forget-gate bias starts at +1."""
    rng = np.random.default_rng(seed)
    H = hidden

    def uni(fan_in, shape):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    b = uni(H, 4 * H)
    b[H:2 * H] += 1.0
    lstm = LstmParams(uni(H, (1, 4 * H)), uni(H, (H, 4 * H)), b)
    sizes = [2 + H, *layers, 1]
    Ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(uni(n_in, (n_in, n_out)))
        bs.append(uni(n_in, n_out))
    return NetworkParams(lstm, MlpParams(Ws, bs), horizon, x_center, x_scale)


# -- forward pieces (shared by arrays and tape variables) --------------------

def _lstm_step(x, h, c, Wx, Wh, b, H):
    z = T.add(T.add(T.matmul(T.reshape(x, (-1, 1)), Wx), T.matmul(h, Wh)), b)
    i = T.sigmoid(T.getitem(z, (slice(None), slice(0, H))))
    f = T.sigmoid(T.getitem(z, (slice(None), slice(H, 2 * H))))
    o = T.sigmoid(T.getitem(z, (slice(None), slice(2 * H, 3 * H))))
    g = T.tanh(T.getitem(z, (slice(None), slice(3 * H, 4 * H))))
    c = T.add(T.mul(f, c), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_states(xs_std, lstm) -> list:
    """Hidden states after each column of ``xs_std`` (shape ``(B, L)``), as a list of ``(B, H)``."""
    xs_std = np.asarray(xs_std, dtype=float)
    B, L = xs_std.shape
    H = T._val(lstm.Wh).shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = []
    for j in range(L):
        h, c = _lstm_step(xs_std[:, j], h, c, lstm.Wx, lstm.Wh, lstm.b, H)
        out.append(h)
    return out


def mlp_head(pre0, mlp):
    """Run the MLP from the first layer's pre-activation ``pre0`` (shape ``(..., n1)``)."""
    z = T.tanh(pre0)
    n = len(mlp.weights)
    for j in range(1, n):
        z = T.add(T.matmul(z, mlp.weights[j]), mlp.biases[j])
        if j < n - 1:
            z = T.tanh(z)
    return z


def first_layer(t_std, x_std, a_part, mlp):
    """Pre-activation of the first dense layer.

    ``a_part`` is the summary already multiplied by the summary rows of the
    first weight matrix, so it can be shared between stencil rows.
    """
    W0 = mlp.weights[0]
    t_std = np.asarray(t_std, dtype=float)[..., None]
    x_std = x_std[..., None] if not isinstance(x_std, T.Var) else T.reshape(x_std, x_std.shape + (1,))
    pre = T.add(T.mul(t_std, T.getitem(W0, 0)), T.mul(x_std, T.getitem(W0, 1)))
    return T.add(T.add(pre, a_part), mlp.biases[0])


def summary_part(a, mlp):
    return T.matmul(a, T.getitem(mlp.weights[0], slice(2, None)))


def _std_t(theta, t):
    return np.asarray(t, dtype=float) / theta.horizon


def _std_x(theta, x):
    return (np.asarray(x, dtype=float) - theta.x_center) / theta.x_scale


def lstm_chain(path, theta) -> np.ndarray:
    """Summaries ``a_0..a_k`` of a single path, shape ``(k + 1, H)``.

    ``theta`` may be :class:`NetworkParams` or :class:`LstmParams`.
    """
    lstm = theta.lstm if isinstance(theta, NetworkParams) else theta
    values = np.asarray(path.values, dtype=float)
    if isinstance(theta, NetworkParams):
        xs = _std_x(theta, values)
    else:
        xs = values
    return np.stack(lstm_states(xs[None, :], lstm))[:, 0, :]


def values_batch(times, values, theta: NetworkParams) -> np.ndarray:
    """``u`` at the tip of each row of ``values`` (shape ``(B, L)``) on grid ``times``."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B, L = values.shape
    H = theta.hidden
    if L > 1:
        a_prev = lstm_states(_std_x(theta, values[:, :-1]), theta.lstm)[-1]
    else:
        a_prev = np.zeros((B, H))
    t = np.full(B, float(times[L - 1]))
    pre = first_layer(_std_t(theta, t), _std_x(theta, values[:, -1]), summary_part(a_prev, theta.mlp), theta.mlp)
    return mlp_head(pre, theta.mlp)[:, 0] + theta.baseline(values[:, -1])


def value(path, theta: NetworkParams) -> float:
    """``u(X) = phi(t_k, x_k, a_{k-1})`` for a :class:`~pathmv.market.PathGrid`."""
    return float(values_batch(path.times, path.values[None, :], theta)[0])


def tip_stencil(times, values, theta: NetworkParams, h: float, dt: float):
    """``(u, u(X^h), u(X^-h), u(flat))`` at the tip of each row of ``values``.

    The flat extension appends ``x_k`` at ``t_k + dt``; its summary is
    ``a_k`` while the other three share ``a_{k-1}``.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B, L = values.shape
    states = lstm_states(_std_x(theta, values), theta.lstm)
    a_cur = states[-1]
    a_prev = states[-2] if L > 1 else np.zeros_like(a_cur)
    tk = float(times[L - 1])
    xk = values[:, -1]
    p_prev = summary_part(a_prev, theta.mlp)
    p_cur = summary_part(a_cur, theta.mlp)
    t0 = np.full(B, _std_t(theta, tk))
    t1 = np.full(B, _std_t(theta, tk + dt))
    pre = np.stack([
        first_layer(t0, _std_x(theta, xk), p_prev, theta.mlp),
        first_layer(t0, _std_x(theta, xk + h), p_prev, theta.mlp),
        first_layer(t0, _std_x(theta, xk - h), p_prev, theta.mlp),
        first_layer(t1, _std_x(theta, xk), p_cur, theta.mlp),
    ])
    out = mlp_head(pre, theta.mlp)[..., 0]
    b = theta.baseline(np.stack([xk, xk + h, xk - h, xk]))
    out = out + b
    return out[0], out[1], out[2], out[3]


def leaves(theta: NetworkParams) -> tuple[list, NetworkParams]:
    """Fresh tape leaves for every array and a view of ``theta`` built from them."""
    vs = [T.Var(a) for a in theta.arrays()]
    return vs, theta.with_arrays(vs)
