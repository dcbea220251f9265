"""Spectrogram front end: WAV decoding, STFT power, mel pooling and dB scaling.

The pipeline applied by :func:`extract_spectrogram` is

    mono mixdown -> Hann-windowed STFT power -> optional mel projection
    -> 10*log10(p / p_max) clipped at ``clip_below_db`` -> optional
    division by ``|clip_below_db|`` so every value lies in [-1, 0].
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .errors import (
    InvalidArgumentError,
    InvalidConfigurationError,
    SeqrepIOError,
    TooShortInputError,
)


@dataclass
class AudioBuffer:
    """Decoded audio. ``samples`` is (N,) or (N, channels), scaled to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim not in (1, 2):
            raise InvalidArgumentError("audio samples must be 1-D or (N, channels)")
        if self.samples.shape[0] == 0 or self.samples.size == 0:
            raise InvalidArgumentError("audio buffer is empty")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidArgumentError(f"invalid sample rate {self.sample_rate!r}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("audio contains non-finite samples")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def mono(self) -> "AudioBuffer":
        """Mix down to a single channel by averaging channels."""
        if self.samples.ndim == 1:
            return self
        return AudioBuffer(self.samples.mean(axis=1), self.sample_rate)


@dataclass(frozen=True)
class SpectrogramConfig:
    window_ms: float = 80.0
    hop_ms: float = 40.0
    fft_size: Optional[int] = None  # None: next power of two >= window
    mel_bands: Optional[int] = 128
    clip_below_db: float = -60.0
    normalize: bool = True

    def __post_init__(self):
        if not (0 < self.hop_ms <= self.window_ms):
            raise InvalidConfigurationError(
                f"need 0 < hop_ms <= window_ms, got hop={self.hop_ms} window={self.window_ms}")
        if not self.clip_below_db < 0:
            raise InvalidConfigurationError("clip_below_db must be negative")
        if self.mel_bands is not None and self.mel_bands < 1:
            raise InvalidConfigurationError("mel_bands must be a positive count")
        if self.fft_size is not None and (self.fft_size < 2 or self.fft_size & (self.fft_size - 1)):
            raise InvalidConfigurationError(f"fft_size {self.fft_size} is not a power of two")

    def window_samples(self, sample_rate: int) -> int:
        return max(2, int(round(self.window_ms * sample_rate / 1000.0)))

    def hop_samples(self, sample_rate: int) -> int:
        return max(1, int(round(self.hop_ms * sample_rate / 1000.0)))

    def resolved_fft_size(self, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        if self.fft_size is None:
            return 1 << (win - 1).bit_length()
        if self.fft_size < win:
            raise InvalidConfigurationError(
                f"fft_size {self.fft_size} is shorter than the {win}-sample window")
        return self.fft_size

    def num_bins(self, sample_rate: int) -> int:
        if self.mel_bands is not None:
            return self.mel_bands
        return self.resolved_fft_size(sample_rate) // 2 + 1


@dataclass
class Spectrogram:
    """T x F matrix of frequency vectors plus frame centre times in seconds."""

    frames: np.ndarray
    instance_id: str = ""
    frame_times: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise InvalidArgumentError(f"spectrogram must be T x F with T, F >= 1, got {self.frames.shape}")
        if self.frame_times is None:
            self.frame_times = np.arange(self.frames.shape[0], dtype=np.float64)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> AudioBuffer:
    """Read an uncompressed PCM WAV file (8/16/32-bit int or 32-bit float)."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (OSError, ValueError, EOFError) as exc:
        raise SeqrepIOError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise SeqrepIOError(f"unsupported WAV sample type {data.dtype} in {path}")
    try:
        return AudioBuffer(samples, rate)
    except InvalidArgumentError as exc:
        raise SeqrepIOError(f"invalid audio in {path}: {exc}") from exc


def write_wav(path, audio: AudioBuffer, bits: int = 16) -> None:
    """Write ``audio`` as PCM (bits=8/16/32) or IEEE float (bits=-32)."""
    x = np.clip(audio.samples, -1.0, 1.0)
    # same full-scale constants as read_wav, so a write/read round trip is exact to quantization
    if bits == 16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif bits == 32:
        data = np.clip(np.round(x * 2147483648.0), -2147483648, 2147483647).astype(np.int32)
    elif bits == 8:
        data = np.clip(np.round(x * 128.0 + 128.0), 0, 255).astype(np.uint8)
    elif bits == -32:
        data = x.astype(np.float32)
    else:
        raise InvalidArgumentError(f"unsupported bit depth {bits}")
    wavfile.write(Path(path), audio.sample_rate, data)


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, ``w[k] = 0.5 * (1 - cos(2*pi*k / (n - 1)))``."""
    if n < 2:
        raise InvalidArgumentError(f"Hann window needs n >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def num_frames(num_samples: int, window: int, hop: int) -> int:
    if num_samples < window:
        return 0
    return (num_samples - window) // hop + 1


def stft_power(audio: AudioBuffer, config: SpectrogramConfig) -> np.ndarray:
    """Squared-magnitude STFT, shape (T, fft_size // 2 + 1).

    Frame ``t`` covers samples ``[t*hop, t*hop + window)``. A trailing partial
    frame is dropped rather than padded.
    """
    audio = audio.mono()
    sr = audio.sample_rate
    win = config.window_samples(sr)
    hop = config.hop_samples(sr)
    n_fft = config.resolved_fft_size(sr)
    x = audio.samples
    n_frames = num_frames(len(x), win, hop)
    if n_frames < 1:
        raise TooShortInputError(
            f"audio has {len(x)} samples, shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.fft.rfft(frames * hann_window(win), n=n_fft, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def power_to_db(power: np.ndarray, clip_below_db: float = -60.0) -> np.ndarray:
    """``10*log10(p / max(p))`` floored at ``clip_below_db``."""
    power = np.asarray(power, dtype=np.float64)
    p_max = power.max() if power.size else 0.0
    if p_max <= 0:
        return np.full(power.shape, float(clip_below_db))
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power / p_max)
    return np.maximum(db, clip_below_db)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(mel_bands: int, sample_rate: int) -> np.ndarray:
    """``mel_bands + 2`` frequencies (Hz) equally spaced in mel from 0 to Nyquist.

    Band ``m`` rises from edge ``m``, peaks at edge ``m + 1`` and falls to
    edge ``m + 2``.
    """
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), mel_bands + 2)
    return mel_to_hz(mels)


def mel_filterbank(mel_bands: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Triangular (peak 1) mel filters, shape (mel_bands, fft_size // 2 + 1)."""
    if mel_bands < 1:
        raise InvalidConfigurationError("mel_bands must be >= 1")
    edges = mel_band_edges(mel_bands, sample_rate)
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (centre - lo)
    falling = (hi - freqs) / (hi - centre)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise InvalidConfigurationError(
            f"{mel_bands} mel bands is too many for fft_size {fft_size} at "
            f"{sample_rate} Hz: band(s) {empty.tolist()[:5]} cover no FFT bin")
    return bank


def extract_spectrogram(audio: AudioBuffer, config: SpectrogramConfig = SpectrogramConfig(),
                        instance_id: str = "") -> Spectrogram:
    audio = audio.mono()
    sr = audio.sample_rate
    power = stft_power(audio, config)
    if config.mel_bands is not None:
        bank = mel_filterbank(config.mel_bands, sr, config.resolved_fft_size(sr))
        power = power @ bank.T
    db = power_to_db(power, config.clip_below_db)
    if config.normalize:
        db = db / abs(config.clip_below_db)
    win = config.window_samples(sr)
    hop = config.hop_samples(sr)
    times = (np.arange(db.shape[0]) * hop + win / 2.0) / sr
    return Spectrogram(db.astype(np.float32), instance_id, times)


def spectrogram_from_file(path, config: SpectrogramConfig = SpectrogramConfig(),
                          instance_id: Optional[str] = None) -> Spectrogram:
    audio = read_wav(path)
    try:
        return extract_spectrogram(audio, config, instance_id if instance_id is not None else str(path))
    except TooShortInputError as exc:
        raise TooShortInputError(f"{path}: {exc}") from exc


def naive_dft_power(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """O(n^2) DFT power of one (already windowed) frame, bins 0..n_fft//2.

    Independent of ``numpy.fft``; used as the oracle for :func:`stft_power`.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = np.arange(len(frame))
    k = np.arange(n_fft // 2 + 1)[:, None]
    angle = 2.0 * math.pi * ((k * n) % n_fft) / n_fft
    re = (frame * np.cos(angle)).sum(axis=1)
    im = -(frame * np.sin(angle)).sum(axis=1)
    return re * re + im * im
