"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np


@dataclass
class BlockCheck:
    name: str
    max_abs_error: float
    max_rel_error: float
    passed: bool


def numerical_gradient(loss_fn: Callable[[], float], params: Dict[str, np.ndarray],
                       eps: float = 1e-4, names: Optional[Iterable[str]] = None):
    """Perturb every entry of ``params`` in place by +/-eps and difference ``loss_fn()``."""
    grads = {}
    for name in (names if names is not None else params):
        p = params[name]
        g = np.zeros(p.shape, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def compare_gradients(analytic: Dict[str, np.ndarray], numeric: Dict[str, np.ndarray],
                      rtol: float = 1e-3, atol: float = 1e-6) -> List[BlockCheck]:
    """Entry passes if ``|a - n| <= atol`` or ``|a - n| / max(|a|, |n|) <= rtol``."""
    out = []
    for name, n in numeric.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
        ok = (diff <= atol) | (rel <= rtol)
        # entries below the absolute floor carry no meaningful relative error
        rel_report = np.where(scale > atol, rel, 0.0)
        out.append(BlockCheck(name, float(diff.max(initial=0.0)), float(rel_report.max(initial=0.0)),
                              bool(ok.all())))
    return out
