"""Recurrent sequence-to-sequence autoencoder with exact BPTT gradients.

Data flow for a batch ``x`` of shape (B, T, F) with validity mask (B, T)::

    encoder stack(s) -> concat final hidden states   (B, L*H*dirs)
    -> bridge: tanh(W s + b)  = representation       (B, L*H*dirs)
    -> split into L decoder initial states of H*dirs
    -> decoder stack over fed-back target frames
    -> tanh(W_out h + b_out) = reconstruction        (B, T, F)

A bidirectional encoder runs a second, independent stack over each
sequence's valid frames in reverse order. Decoder step 0 always sees a zero
frame; step ``t`` sees target frame ``t - 1`` when the per-step Bernoulli
draw (probability ``feedback_prob``) succeeds, otherwise zeros.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List

import numpy as np

from ..errors import InvalidArgumentError, NumericalError, ShapeError
from ..tensorcore.cells import NUM_GATES, CellParams, glorot_uniform
from ..tensorcore.rnn import rnn_backward, rnn_forward, validate_mask


@dataclass(frozen=True)
class AutoencoderTopology:
    cell: str = "gru"
    num_layers: int = 2
    hidden_dim: int = 16
    input_dim: int = 128
    bidirectional: bool = False
    feedback_prob: float = 0.5
    reverse_target: bool = True

    def __post_init__(self):
        if self.cell not in NUM_GATES:
            raise InvalidArgumentError(f"cell must be one of {sorted(NUM_GATES)}, got {self.cell!r}")
        if self.num_layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise InvalidArgumentError("num_layers, hidden_dim and input_dim must all be >= 1")
        if not 0.0 <= self.feedback_prob <= 1.0:
            raise InvalidArgumentError(f"feedback_prob must lie in [0, 1], got {self.feedback_prob}")

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def decoder_hidden_dim(self) -> int:
        return self.hidden_dim * self.directions

    @property
    def representation_dim(self) -> int:
        return self.num_layers * self.hidden_dim * self.directions

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "AutoencoderTopology":
        return cls(**d)


def parameter_shapes(topo: AutoencoderTopology) -> Dict[str, tuple]:
    """Ordered parameter names and shapes for ``topo``."""
    g = NUM_GATES[topo.cell]
    H, Hd, F, L = topo.hidden_dim, topo.decoder_hidden_dim, topo.input_dim, topo.num_layers
    shapes = {}
    for direction in ("fw", "bw")[:topo.directions]:
        for l in range(L):
            d_in = F if l == 0 else H
            shapes[f"encoder.{direction}.{l}.W"] = (d_in, g * H)
            shapes[f"encoder.{direction}.{l}.U"] = (H, g * H)
            shapes[f"encoder.{direction}.{l}.b"] = (g * H,)
    E = topo.representation_dim
    shapes["bridge.W"] = (E, E)
    shapes["bridge.b"] = (E,)
    for l in range(L):
        d_in = F if l == 0 else Hd
        shapes[f"decoder.{l}.W"] = (d_in, g * Hd)
        shapes[f"decoder.{l}.U"] = (Hd, g * Hd)
        shapes[f"decoder.{l}.b"] = (g * Hd,)
    shapes["output.W"] = (Hd, F)
    shapes["output.b"] = (F,)
    return shapes


def reverse_valid(x, lengths):
    """Reverse each sequence's first ``lengths[b]`` steps, leaving padding in place.

    The permutation is its own inverse, so it also maps gradients back.
    """
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    lengths = np.asarray(lengths)[:, None]
    idx = np.where(t < lengths, lengths - 1 - t, t)
    return np.take_along_axis(x, idx[:, :, None], axis=1)


def decoder_inputs(target, keep):
    """Decoder input sequence: zeros at step 0, ``target[t-1] * keep[t]`` after."""
    target = np.asarray(target)
    inp = np.zeros_like(target)
    inp[:, 1:] = target[:, :-1] * np.asarray(keep)[:, 1:, None]
    return inp


def draw_feedback(rng, shape, feedback_prob):
    """Boolean (B, T) array; True where the decoder is fed the expected frame."""
    if feedback_prob >= 1.0:
        return np.ones(shape, dtype=bool)
    if feedback_prob <= 0.0:
        return np.zeros(shape, dtype=bool)
    if rng is None:
        raise InvalidArgumentError("a random generator is required when 0 < feedback_prob < 1")
    return rng.random(shape) < feedback_prob


def rmse_loss(reconstruction, target, mask=None) -> float:
    """``sqrt(sum over valid frames of (r - t)^2 / (valid_frames * F))``."""
    r = np.asarray(reconstruction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise ShapeError(f"reconstruction {r.shape} and target {t.shape} differ")
    if mask is None:
        mask = np.ones(r.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != r.shape[:-1]:
        raise ShapeError(f"mask {mask.shape} does not match frames {r.shape[:-1]}")
    n = int(mask.sum())
    if n == 0:
        raise InvalidArgumentError("RMSE over zero valid frames")
    sq = np.square(r - t).sum(axis=-1)
    return float(np.sqrt(sq[mask].sum() / (n * r.shape[-1])))


class Autoencoder:
    """Parameters plus forward/backward passes for one topology.

    ``params`` maps names from :func:`parameter_shapes` to arrays; the layer
    views handed to the recurrent core share memory with these arrays, so
    in-place optimizer updates take effect immediately.
    """

    def __init__(self, topology: AutoencoderTopology, params: Dict[str, np.ndarray]):
        expected = parameter_shapes(topology)
        if list(params) != list(expected):
            missing = sorted(set(expected) ^ set(params))
            if missing:
                raise ShapeError(f"parameter set does not match topology: {missing[:5]}")
            params = {k: params[k] for k in expected}
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(f"{name} has shape {params[name].shape}, topology needs {shape}")
        self.topology = topology
        self.params = params

    @classmethod
    def initialize(cls, topology: AutoencoderTopology, seed=0, dtype=np.float32) -> "Autoencoder":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        topo = topology
        params = {}
        for direction in ("fw", "bw")[:topo.directions]:
            for l in range(topo.num_layers):
                d_in = topo.input_dim if l == 0 else topo.hidden_dim
                cell = CellParams.initialize(topo.cell, d_in, topo.hidden_dim, rng, dtype)
                params.update(_cell_entries(f"encoder.{direction}.{l}", cell))
        E = topo.representation_dim
        params["bridge.W"] = glorot_uniform(rng, E, E).astype(dtype)
        params["bridge.b"] = np.zeros(E, dtype)
        for l in range(topo.num_layers):
            d_in = topo.input_dim if l == 0 else topo.decoder_hidden_dim
            cell = CellParams.initialize(topo.cell, d_in, topo.decoder_hidden_dim, rng, dtype)
            params.update(_cell_entries(f"decoder.{l}", cell))
        params["output.W"] = glorot_uniform(rng, topo.decoder_hidden_dim, topo.input_dim).astype(dtype)
        params["output.b"] = np.zeros(topo.input_dim, dtype)
        return cls(topology, params)

    @property
    def dtype(self):
        return self.params["bridge.W"].dtype

    def astype(self, dtype) -> "Autoencoder":
        return Autoencoder(self.topology, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.topology, {k: v.copy() for k, v in self.params.items()})

    def _layers(self, prefix) -> List[CellParams]:
        p = self.params
        return [CellParams(self.topology.cell, p[f"{prefix}.{l}.W"], p[f"{prefix}.{l}.U"], p[f"{prefix}.{l}.b"])
                for l in range(self.topology.num_layers)]

    def encoder_layers(self, direction="fw") -> List[CellParams]:
        return self._layers(f"encoder.{direction}")

    def decoder_layers(self) -> List[CellParams]:
        return self._layers("decoder")

    # -- batching helpers ------------------------------------------------------

    def _prepare(self, frames, mask):
        x = np.asarray(frames, dtype=self.dtype)
        batched = x.ndim == 3
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ShapeError(f"frames must be (T, F) or (B, T, F), got {np.shape(frames)}")
        if x.shape[2] != self.topology.input_dim:
            raise ShapeError(f"frames have {x.shape[2]} bins, model expects {self.topology.input_dim}")
        if x.shape[1] < 1:
            raise ShapeError("sequence has no frames")
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        mask = validate_mask(mask, x.shape[0], x.shape[1])
        return x, mask, batched

    # -- forward pieces ----------------------------------------------------------

    def _encode(self, x, mask):
        lengths = mask.sum(axis=1)
        traces = [rnn_forward(x, self.encoder_layers("fw"), mask)]
        if self.topology.bidirectional:
            traces.append(rnn_forward(reverse_valid(x, lengths), self.encoder_layers("bw"), mask))
        state = np.concatenate([tr.final_h[l] for l in range(self.topology.num_layers) for tr in traces],
                               axis=1)
        return state, traces

    def encode(self, frames, mask=None):
        """Concatenated final hidden states of every encoder layer (and direction)."""
        x, mask, batched = self._prepare(frames, mask)
        state, _ = self._encode(x, mask)
        return state if batched else state[0]

    def bridge(self, encoder_state):
        """Returns ``(representation, decoder_init)``; init is one chunk per decoder layer."""
        s = np.asarray(encoder_state, dtype=self.dtype)
        if s.shape[-1] != self.topology.representation_dim:
            raise ShapeError(f"encoder state has length {s.shape[-1]}, "
                             f"bridge expects {self.topology.representation_dim}")
        rep = np.tanh(s @ self.params["bridge.W"] + self.params["bridge.b"])
        Hd = self.topology.decoder_hidden_dim
        init = [rep[..., l * Hd:(l + 1) * Hd] for l in range(self.topology.num_layers)]
        return rep, init

    def represent(self, frames, mask=None):
        """The learned feature vector(s): bridge activations for ``frames``."""
        rep, _ = self.bridge(self.encode(frames, mask))
        return rep

    def decoder_target(self, frames, mask=None):
        x, mask, batched = self._prepare(frames, mask)
        tgt = reverse_valid(x, mask.sum(axis=1)) if self.topology.reverse_target else x
        return tgt if batched else tgt[0]

    def decode(self, target, decoder_init, feedback_prob=None, rng=None, keep=None):
        """Run the decoder over ``target`` (already oriented) from ``decoder_init``.

        ``keep`` overrides the random feedback draws when given.
        """
        tgt = np.asarray(target, dtype=self.dtype)
        batched = tgt.ndim == 3
        if not batched:
            tgt = tgt[None]
            decoder_init = [np.asarray(h)[None] for h in decoder_init]
        if feedback_prob is None:
            feedback_prob = self.topology.feedback_prob
        if keep is None:
            keep = draw_feedback(rng, tgt.shape[:2], feedback_prob)
        trace = rnn_forward(decoder_inputs(tgt, keep), self.decoder_layers(), initial_h=decoder_init)
        recon = np.tanh(trace.outputs[-1] @ self.params["output.W"] + self.params["output.b"])
        return recon if batched else recon[0]

    def reconstruct(self, frames, mask=None, rng=None, keep=None):
        rep, init = self.bridge(self.encode(frames, mask))
        return self.decode(self.decoder_target(frames, mask), init, rng=rng, keep=keep)

    # -- training objective --------------------------------------------------------

    def loss(self, frames, mask=None, keep=None, rng=None) -> float:
        """RMSE reconstruction loss without gradients."""
        x, mask, _ = self._prepare(frames, mask)
        if keep is None:
            keep = draw_feedback(rng, x.shape[:2], self.topology.feedback_prob)
        return self._forward(x, mask, keep)["loss"]

    def _forward(self, x, mask, keep):
        topo = self.topology
        enc_state, enc_traces = self._encode(x, mask)
        rep, init = self.bridge(enc_state)
        target = reverse_valid(x, mask.sum(axis=1)) if topo.reverse_target else x
        dec = rnn_forward(decoder_inputs(target, keep), self.decoder_layers(), initial_h=init)
        recon = np.tanh(dec.outputs[-1] @ self.params["output.W"] + self.params["output.b"])
        loss = rmse_loss(recon, target, mask)
        return {"enc_state": enc_state, "enc_traces": enc_traces, "rep": rep, "target": target,
                "dec": dec, "recon": recon, "loss": loss, "mask": mask}

    def loss_and_grads(self, frames, mask=None, keep=None, rng=None, loss_scale: float = 1.0):
        """Forward pass plus exact gradients of ``loss_scale * RMSE`` for every parameter.

        Returns ``(loss, grads)``; ``loss`` is the unscaled RMSE.
        """
        x, mask, _ = self._prepare(frames, mask)
        if keep is None:
            keep = draw_feedback(rng, x.shape[:2], self.topology.feedback_prob)
        fw = self._forward(x, mask, keep)
        loss = fw["loss"]
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} (batch of {x.shape[0]}, {x.shape[1]} steps)")
        topo, p, dtype = self.topology, self.params, self.dtype
        grads: Dict[str, np.ndarray] = {}
        recon, target, dec = fw["recon"], fw["target"], fw["dec"]
        F = topo.input_dim
        n = int(mask.sum())

        # d loss / d recon for L = sqrt(S / (n F))
        if loss > 0:
            coef = loss_scale / (n * F * loss)
            d_recon = (recon - target) * (mask[:, :, None] * coef)
        else:
            d_recon = np.zeros_like(recon)
        d_pre = (d_recon * (1.0 - recon * recon)).astype(dtype, copy=False)
        top = dec.outputs[-1]
        grads["output.W"] = top.reshape(-1, top.shape[2]).T @ d_pre.reshape(-1, F)
        grads["output.b"] = d_pre.sum(axis=(0, 1))
        d_top = d_pre @ p["output.W"].T
        _, d_init, _, dec_grads = rnn_backward(dec, d_top)

        rep = fw["rep"]
        d_rep = np.concatenate(d_init, axis=1)
        d_bpre = d_rep * (1.0 - rep * rep)
        grads["bridge.W"] = fw["enc_state"].T @ d_bpre
        grads["bridge.b"] = d_bpre.sum(axis=0)
        d_state = d_bpre @ p["bridge.W"].T

        H, dirs = topo.hidden_dim, topo.directions
        for di, (direction, trace) in enumerate(zip(("fw", "bw"), fw["enc_traces"])):
            d_final = [d_state[:, (l * dirs + di) * H:(l * dirs + di + 1) * H]
                       for l in range(topo.num_layers)]
            _, _, _, enc_grads = rnn_backward(trace, None, d_final)
            for l, g in enumerate(enc_grads):
                grads.update(_cell_entries(f"encoder.{direction}.{l}", g))
        for l, g in enumerate(dec_grads):
            grads.update(_cell_entries(f"decoder.{l}", g))

        ordered = {k: grads[k].astype(dtype, copy=False) for k in p}
        for k, g in ordered.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {k}")
        return loss, ordered


def _cell_entries(prefix, cell: CellParams):
    return {f"{prefix}.W": cell.W, f"{prefix}.U": cell.U, f"{prefix}.b": cell.b}
