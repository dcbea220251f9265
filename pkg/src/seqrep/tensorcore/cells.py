"""GRU and LSTM cells with hand-derived backward steps.

Gate weights are stored fused along the last axis. For a cell with hidden
size ``H`` the column blocks are

    GRU:  [update z | reset r | candidate h~]     (3H)
    LSTM: [input i | forget f | output o | candidate g]   (4H)

All step functions operate on batches, ``x`` of shape (B, D) and ``h`` of
shape (B, H). The public ``*_cell_forward`` helpers also accept single
vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

NUM_GATES = {"gru": 3, "lstm": 4}


def sigmoid(x):
    # tanh form cannot overflow for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


@dataclass
class CellParams:
    kind: str
    W: np.ndarray  # (input_dim, G*H) input weights
    U: np.ndarray  # (H, G*H) recurrent weights
    b: np.ndarray  # (G*H,)

    def __post_init__(self):
        if self.kind not in NUM_GATES:
            raise InvalidArgumentError(f"unknown cell kind {self.kind!r}")
        g = NUM_GATES[self.kind]
        if self.U.ndim != 2 or self.U.shape[1] != g * self.U.shape[0]:
            raise ShapeError(f"{self.kind} recurrent weights have shape {self.U.shape}")
        h = self.U.shape[0]
        if self.W.ndim != 2 or self.W.shape[1] != g * h:
            raise ShapeError(f"{self.kind} input weights {self.W.shape} inconsistent with hidden {h}")
        if self.b.shape != (g * h,):
            raise ShapeError(f"{self.kind} bias has shape {self.b.shape}, expected {(g * h,)}")

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[0]

    @property
    def dtype(self):
        return self.W.dtype

    def zeros_like(self) -> "CellParams":
        return CellParams(self.kind, np.zeros_like(self.W), np.zeros_like(self.U), np.zeros_like(self.b))

    @classmethod
    def zeros(cls, kind, input_dim, hidden_dim, dtype=np.float32) -> "CellParams":
        g = NUM_GATES[kind]
        return cls(kind, np.zeros((input_dim, g * hidden_dim), dtype),
                   np.zeros((hidden_dim, g * hidden_dim), dtype),
                   np.zeros(g * hidden_dim, dtype))

    @classmethod
    def initialize(cls, kind, input_dim, hidden_dim, rng, dtype=np.float32) -> "CellParams":
        """Glorot-uniform per gate block; zero biases except LSTM forget bias 1."""
        g = NUM_GATES.get(kind)
        if g is None:
            raise InvalidArgumentError(f"unknown cell kind {kind!r}")
        W = np.concatenate([glorot_uniform(rng, input_dim, hidden_dim) for _ in range(g)], axis=1)
        U = np.concatenate([glorot_uniform(rng, hidden_dim, hidden_dim) for _ in range(g)], axis=1)
        b = np.zeros(g * hidden_dim)
        if kind == "lstm":
            b[hidden_dim:2 * hidden_dim] = 1.0
        return cls(kind, W.astype(dtype), U.astype(dtype), b.astype(dtype))


def glorot_uniform(rng, fan_in, fan_out):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def _check_step_shapes(x, h, params):
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeError(f"batch mismatch between input {x.shape} and state {h.shape}")
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input dim {x.shape[1]} != cell input dim {params.input_dim}")
    if h.shape[1] != params.hidden_dim:
        raise ShapeError(f"state dim {h.shape[1]} != cell hidden dim {params.hidden_dim}")


# -- GRU ---------------------------------------------------------------------

def gru_step(x, h, p: CellParams):
    """One GRU step on a batch. Returns ``(h_new, cache)``."""
    H = p.hidden_dim
    ax = x @ p.W + p.b
    ah = h @ p.U[:, :2 * H]
    z = sigmoid(ax[:, :H] + ah[:, :H])
    r = sigmoid(ax[:, H:2 * H] + ah[:, H:])
    rh = r * h
    n = np.tanh(ax[:, 2 * H:] + rh @ p.U[:, 2 * H:])
    h_new = (1.0 - z) * h + z * n
    return h_new, (x, h, z, r, rh, n)


def gru_step_backward(dh_new, cache, p: CellParams, grads: CellParams):
    """Accumulate parameter gradients into ``grads``; return ``(dx, dh)``."""
    x, h, z, r, rh, n = cache
    H = p.hidden_dim
    dz = dh_new * (n - h)
    dn = dh_new * z
    dh = dh_new * (1.0 - z)
    dan = dn * (1.0 - n * n)
    grads.U[:, 2 * H:] += rh.T @ dan
    drh = dan @ p.U[:, 2 * H:].T
    dr = drh * h
    dh += drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dazr = np.concatenate([daz, dar], axis=1)
    grads.U[:, :2 * H] += h.T @ dazr
    dh += dazr @ p.U[:, :2 * H].T
    da = np.concatenate([dazr, dan], axis=1)
    grads.W += x.T @ da
    grads.b += da.sum(axis=0)
    dx = da @ p.W.T
    return dx, dh


def gru_cell_forward(x, h, params: CellParams):
    """Single GRU update ``h' = (1-z)*h + z*tanh(W_h x + U_h (r*h) + b_h)``."""
    if params.kind != "gru":
        raise InvalidArgumentError("gru_cell_forward needs GRU parameters")
    x, h = np.asarray(x), np.asarray(h)
    single = x.ndim == 1
    x2, h2 = np.atleast_2d(x), np.atleast_2d(h)
    _check_step_shapes(x2, h2, params)
    h_new, _ = gru_step(x2, h2, params)
    return h_new[0] if single else h_new


# -- LSTM --------------------------------------------------------------------

def lstm_step(x, h, c, p: CellParams):
    """One LSTM step on a batch. Returns ``(h_new, c_new, cache)``."""
    H = p.hidden_dim
    a = x @ p.W + h @ p.U + p.b
    ifo = sigmoid(a[:, :3 * H])
    i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
    g = np.tanh(a[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, o, g, tc)


def lstm_step_backward(dh_new, dc_new, cache, p: CellParams, grads: CellParams):
    """Accumulate parameter gradients; return ``(dx, dh, dc)``."""
    x, h, c, i, f, o, g, tc = cache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    da = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c * f * (1.0 - f),
        do * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ], axis=1)
    grads.W += x.T @ da
    grads.U += h.T @ da
    grads.b += da.sum(axis=0)
    return da @ p.W.T, da @ p.U.T, dc * f


def lstm_cell_forward(x, h, c, params: CellParams):
    """Single LSTM update; returns ``(h', c')``."""
    if params.kind != "lstm":
        raise InvalidArgumentError("lstm_cell_forward needs LSTM parameters")
    x, h, c = np.asarray(x), np.asarray(h), np.asarray(c)
    single = x.ndim == 1
    x2, h2, c2 = np.atleast_2d(x), np.atleast_2d(h), np.atleast_2d(c)
    _check_step_shapes(x2, h2, params)
    if c2.shape != h2.shape:
        raise ShapeError(f"cell state {c2.shape} does not match hidden state {h2.shape}")
    h_new, c_new, _ = lstm_step(x2, h2, c2, params)
    if single:
        return h_new[0], c_new[0]
    return h_new, c_new
