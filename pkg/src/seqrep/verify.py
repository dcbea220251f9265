"""User-runnable numerical self-tests (gradient and DFT oracles)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .dsp import AudioBuffer, SpectrogramConfig, hann_window, naive_dft_power, stft_power
from .seq2seq.model import Autoencoder, AutoencoderTopology
from .tensorcore.gradcheck import compare_gradients, numerical_gradient

# Test-only fault injection: applied to analytic gradients before comparison.
GRADIENT_HOOK: Optional[Callable[[dict], dict]] = None


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float
    failing: List[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<44} max_rel_err={self.max_rel_error:.3e}"
        if self.failing:
            text += "  failing: " + ", ".join(self.failing)
        return text


def autoencoder_gradient_check(cell="gru", num_layers=2, feedback_prob=1.0, bidirectional=False,
                               hidden_dim=8, input_dim=6, steps=5, seed=0) -> CheckResult:
    topo = AutoencoderTopology(cell=cell, num_layers=num_layers, hidden_dim=hidden_dim, input_dim=input_dim,
                               bidirectional=bidirectional, feedback_prob=feedback_prob)
    model = Autoencoder.initialize(topo, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1.0, 0.0, size=(2, steps, input_dim))
    mask = np.ones((2, steps), dtype=bool)
    mask[1, steps - 2:] = False
    keep = rng.random((2, steps)) < feedback_prob
    _, analytic = model.loss_and_grads(x, mask, keep=keep)
    if GRADIENT_HOOK is not None:
        analytic = GRADIENT_HOOK(analytic)
    numeric = numerical_gradient(lambda: model.loss(x, mask, keep=keep), model.params, eps=1e-4)
    blocks = compare_gradients(analytic, numeric, rtol=1e-3, atol=1e-6)
    name = f"grad {cell} L={num_layers} fb={feedback_prob:g}" + (" bidir" if bidirectional else "")
    return CheckResult(name, all(b.passed for b in blocks), max(b.max_rel_error for b in blocks),
                       [b.name for b in blocks if not b.passed])


def stft_oracle_check(trials=10, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        sr = 1000
        cfg = SpectrogramConfig(window_ms=int(rng.integers(16, 65)), hop_ms=8, mel_bands=None)
        x = rng.uniform(-1, 1, size=int(rng.integers(128, 1025)))
        fast = stft_power(AudioBuffer(x, sr), cfg)
        win, hop, n_fft = cfg.window_samples(sr), cfg.hop_samples(sr), cfg.resolved_fft_size(sr)
        w = hann_window(win)
        for t in range(fast.shape[0]):
            slow = naive_dft_power(x[t * hop:t * hop + win] * w, n_fft)
            worst = max(worst, float(np.max(np.abs(fast[t] - slow)) / max(np.max(np.abs(slow)), 1e-300)))
    return CheckResult("stft vs naive DFT", worst <= 1e-6, worst)


def tone_argmax_check(trials=10, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    sr, cfg = 8000, SpectrogramConfig(window_ms=64, hop_ms=32, mel_bands=None)
    n_fft = cfg.resolved_fft_size(sr)
    misses = 0
    for _ in range(trials):
        k = int(rng.integers(4, n_fft // 2 - 4))
        t = np.arange(sr // 2) / sr
        power = stft_power(AudioBuffer(0.5 * np.sin(2 * np.pi * k * sr / n_fft * t), sr), cfg)
        misses += int(np.any(power.argmax(axis=1) != k))
    return CheckResult("pure-tone argmax bin", misses == 0, misses / trials)


def run_checks(quick: bool = False) -> List[CheckResult]:
    if quick:
        grads = [("gru", 2, 1.0, False), ("lstm", 2, 0.0, False)]
    else:
        grads = [(c, l, fb, False) for c in ("gru", "lstm") for l in (1, 2) for fb in (0.0, 1.0)]
        grads += [("gru", 2, 0.5, True), ("lstm", 2, 0.5, True)]
    results = [autoencoder_gradient_check(c, l, fb, bi) for c, l, fb, bi in grads]
    results.append(stft_oracle_check(trials=3 if quick else 10))
    results.append(tone_argmax_check(trials=5 if quick else 20))
    return results
