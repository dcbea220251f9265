"""Adam with bias correction and global-norm gradient clipping.

Parameters and gradients are dicts mapping names to arrays; updates happen
in place so views held elsewhere (e.g. :class:`CellParams`) stay in sync.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

Arrays = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Arrays, **hyper) -> "OptimizerState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **hyper)

    def hyperparameters(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "epsilon": self.epsilon}


def global_norm(grads: Arrays) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: Arrays, max_norm: float) -> Arrays:
    """Scale all gradients by ``max_norm / g`` when their global L2 norm ``g`` exceeds it."""
    if not max_norm > 0:
        raise InvalidArgumentError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype, copy=False) for k, g in grads.items()}


def adam_step(params: Arrays, grads: Arrays, state: OptimizerState) -> OptimizerState:
    """One Adam update of ``params`` in place; increments ``state.step``."""
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeError(f"gradient/parameter names differ: {missing[:5]}")
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    # bias corrections folded into the step size
    lr_t = state.learning_rate * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_t = state.epsilon * math.sqrt(1.0 - b2 ** t)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr_t * m / (np.sqrt(v) + eps_t)).astype(p.dtype, copy=False)
    return state
