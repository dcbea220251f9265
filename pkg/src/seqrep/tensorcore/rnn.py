"""Multi-layer recurrent stacks with masking and backpropagation through time."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import InvalidMaskError, ShapeError
from .cells import CellParams, gru_step, gru_step_backward, lstm_step, lstm_step_backward


@dataclass
class RnnTrace:
    """Forward activations of a layer stack, kept for the backward pass.

    ``outputs[l]`` is layer ``l``'s hidden sequence (B, T, H); ``final_h[l]``
    and ``final_c[l]`` its state after the last step. For unbatched input
    the leading batch axis is still present; use :meth:`unbatched`.
    """

    layers: List[CellParams]
    inputs: np.ndarray
    mask: Optional[np.ndarray]
    outputs: List[np.ndarray] = field(default_factory=list)
    final_h: List[np.ndarray] = field(default_factory=list)
    final_c: List[Optional[np.ndarray]] = field(default_factory=list)
    caches: List[list] = field(default_factory=list)
    batched: bool = True

    def unbatched(self):
        """``(outputs, final_h, final_c)`` with the batch axis dropped."""
        if self.batched:
            return self.outputs, self.final_h, self.final_c
        return ([o[0] for o in self.outputs], [h[0] for h in self.final_h],
                [None if c is None else c[0] for c in self.final_c])


def validate_mask(mask, batch, steps):
    """Return ``mask`` as (B, T) bool, checking it is a true-prefix per row."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != (batch, steps):
        raise ShapeError(f"mask shape {mask.shape} does not match (batch, steps) = {(batch, steps)}")
    if steps > 1 and np.any(mask[:, 1:] & ~mask[:, :-1]):
        raise InvalidMaskError("mask must be a contiguous run of True followed by False")
    return mask


def lengths_to_mask(lengths, steps):
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


def rnn_forward(sequence, layers: List[CellParams], mask=None,
                initial_h=None, initial_c=None) -> RnnTrace:
    """Run a layer stack over ``sequence`` of shape (T, D) or (B, T, D).

    Initial states default to zero. Where ``mask`` is False the previous
    state is copied forward unchanged, so the final state equals the state
    after the last valid step.
    """
    x = np.asarray(sequence)
    batched = x.ndim == 3
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"sequence must be (T, D) or (B, T, D), got shape {np.shape(sequence)}")
    if not layers:
        raise ShapeError("at least one layer is required")
    B, T, D = x.shape
    if mask is not None:
        mask = validate_mask(mask, B, T)
    dtype = layers[0].dtype
    x = x.astype(dtype, copy=False)
    trace = RnnTrace(layers, x, mask, batched=batched)
    layer_in = x
    for l, p in enumerate(layers):
        if layer_in.shape[2] != p.input_dim:
            raise ShapeError(f"layer {l} expects input dim {p.input_dim}, got {layer_in.shape[2]}")
        H = p.hidden_dim
        h = _initial(initial_h, l, B, H, dtype, batched)
        lstm = p.kind == "lstm"
        c = _initial(initial_c, l, B, H, dtype, batched) if lstm else None
        out = np.empty((B, T, H), dtype=dtype)
        caches = []
        for t in range(T):
            xt = layer_in[:, t]
            if lstm:
                h_new, c_new, cache = lstm_step(xt, h, c, p)
            else:
                h_new, cache = gru_step(xt, h, p)
            if mask is not None:
                m = mask[:, t, None]
                h_new = np.where(m, h_new, h)
                if lstm:
                    c_new = np.where(m, c_new, c)
            h = h_new
            if lstm:
                c = c_new
            out[:, t] = h
            caches.append(cache)
        trace.outputs.append(out)
        trace.final_h.append(h)
        trace.final_c.append(c)
        trace.caches.append(caches)
        layer_in = out
    return trace


def _initial(states, l, B, H, dtype, batched):
    if states is None or states[l] is None:
        return np.zeros((B, H), dtype=dtype)
    s = np.asarray(states[l], dtype=dtype)
    if not batched and s.ndim == 1:
        s = s[None]
    if s.shape != (B, H):
        raise ShapeError(f"initial state for layer {l} has shape {s.shape}, expected {(B, H)}")
    return s


def rnn_backward(trace: RnnTrace, d_outputs=None, d_final_h=None, d_final_c=None):
    """Reverse-mode pass through a traced stack.

    Parameters
    ----------
    d_outputs : array (B, T, H_top), optional
        Loss gradient w.r.t. the top layer's hidden sequence.
    d_final_h, d_final_c : list, optional
        Per-layer gradients w.r.t. the final states.

    Returns
    -------
    dx : (B, T, D) gradient w.r.t. the input sequence
    d_init_h, d_init_c : per-layer gradients w.r.t. initial states
    grads : list of CellParams holding parameter gradients
    """
    layers = trace.layers
    L = len(layers)
    B, T, _ = trace.inputs.shape
    mask = trace.mask
    grads = [p.zeros_like() for p in layers]
    d_init_h: List[np.ndarray] = [None] * L
    d_init_c: List[Optional[np.ndarray]] = [None] * L
    d_out = None if d_outputs is None else np.asarray(d_outputs)
    if d_out is not None and not trace.batched and d_out.ndim == 2:
        d_out = d_out[None]
    for l in range(L - 1, -1, -1):
        p = layers[l]
        H = p.hidden_dim
        lstm = p.kind == "lstm"
        dtype = p.dtype
        dh_carry = _grad_or_zero(d_final_h, l, B, H, dtype, trace.batched)
        dc_carry = _grad_or_zero(d_final_c, l, B, H, dtype, trace.batched) if lstm else None
        layer_in = trace.inputs if l == 0 else trace.outputs[l - 1]
        dx = np.zeros((B, T, layer_in.shape[2]), dtype=dtype)
        caches = trace.caches[l]
        for t in range(T - 1, -1, -1):
            dh_t = dh_carry if d_out is None else dh_carry + d_out[:, t]
            if mask is not None:
                m = mask[:, t, None]
                dh_new = np.where(m, dh_t, 0.0)
                dh_skip = np.where(m, 0.0, dh_t)
                if lstm:
                    dc_new = np.where(m, dc_carry, 0.0)
                    dc_skip = np.where(m, 0.0, dc_carry)
            else:
                dh_new, dh_skip = dh_t, 0.0
                if lstm:
                    dc_new, dc_skip = dc_carry, 0.0
            if lstm:
                dxt, dh_prev, dc_prev = lstm_step_backward(dh_new, dc_new, caches[t], p, grads[l])
                dc_carry = dc_prev + dc_skip
            else:
                dxt, dh_prev = gru_step_backward(dh_new, caches[t], p, grads[l])
            dh_carry = dh_prev + dh_skip
            dx[:, t] = dxt
        d_init_h[l] = dh_carry
        d_init_c[l] = dc_carry
        d_out = dx
    return d_out, d_init_h, d_init_c, grads


def _grad_or_zero(grads, l, B, H, dtype, batched):
    if grads is None or grads[l] is None:
        return np.zeros((B, H), dtype=dtype)
    g = np.asarray(grads[l], dtype=dtype)
    if not batched and g.ndim == 1:
        g = g[None]
    return g
