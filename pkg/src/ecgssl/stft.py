"""Short-time Fourier transform and log-power spectrograms.

Frames are taken without padding: frame ``f`` covers samples
``[f * hop, f * hop + window_len)``, so ``frames = (n - window_len) // hop + 1``.
Each frame is windowed and passed through an iterative radix-2 FFT; only the
non-negative frequency bins ``0 .. window_len // 2`` are kept.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputTooShortError, ParameterError

WINDOW_KINDS = ("hann", "gaussian", "rectangular")


@dataclass
class StftConfig:
    window_len: int = 128
    hop: int = 64
    window_kind: str = "hann"
    gaussian_sigma: Optional[float] = None  # samples; defaults to window_len / 6
    log_epsilon: float = 1e-10

    def __post_init__(self):
        n = self.window_len
        if n < 2 or n & (n - 1):
            raise ParameterError(f"window_len must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise ParameterError(f"hop must satisfy 0 < hop <= window_len, got {self.hop}")
        if self.window_kind not in WINDOW_KINDS:
            raise ParameterError(f"unknown window kind {self.window_kind!r}")
        if not self.log_epsilon > 0:
            raise ParameterError("log_epsilon must be positive")
        if self.gaussian_sigma is not None and not self.gaussian_sigma > 0:
            raise ParameterError("gaussian_sigma must be positive")

    @property
    def freq_bins(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise InputTooShortError(
                f"signal of {n_samples} samples is shorter than the {self.window_len}-sample window")
        return (n_samples - self.window_len) // self.hop + 1


def window(cfg: StftConfig) -> np.ndarray:
    """Window coefficients, non-negative and scaled so the largest is 1."""
    n = cfg.window_len
    idx = np.arange(n, dtype=np.float64)
    if cfg.window_kind == "rectangular":
        w = np.ones(n)
    elif cfg.window_kind == "hann":
        # periodic Hann, the usual choice for spectral analysis
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * idx / n)
    else:
        sigma = cfg.gaussian_sigma if cfg.gaussian_sigma is not None else n / 6.0
        w = np.exp(-0.5 * ((idx - (n - 1) / 2.0) / sigma) ** 2)
    return w / w.max()


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """DFT along the last axis via iterative Cooley-Tukey; length must be a power of two."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ParameterError(f"FFT length must be a power of two, got {n}")
    a = x[..., _bit_reverse_permutation(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        a = blocks.reshape(a.shape)
        size *= 2
    return a


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """[..., n] -> [..., frames, window_len] view of the framed signal."""
    n_frames = cfg.n_frames(x.shape[-1])
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=-1)
    return windows[..., ::cfg.hop, :][..., :n_frames, :]


def stft(x, cfg: StftConfig) -> np.ndarray:
    """Complex STFT of a 1-D signal (or a stack of them): [..., n] -> [..., freq_bins, frames]."""
    x = np.asarray(x, dtype=np.float64)
    frames = frame_signal(x, cfg) * window(cfg)
    spec = fft_radix2(frames)[..., : cfg.freq_bins]
    return np.swapaxes(spec, -1, -2)


@dataclass
class Spectrogram:
    values: np.ndarray       # [leads, freq_bins, frames], log(|X|^2 + eps)
    frame_times: np.ndarray  # seconds, centre of each frame
    bin_freqs: np.ndarray    # Hz


def spectrogram(record_leads, cfg: StftConfig, fs: float = 500.0) -> Spectrogram:
    """Log-power spectrogram of each lead, stacked as channels."""
    x = np.asarray(record_leads, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    power = np.abs(stft(x, cfg)) ** 2
    values = np.log(power + cfg.log_epsilon).astype(np.float32)
    n_frames = values.shape[-1]
    frame_times = (np.arange(n_frames) * cfg.hop + cfg.window_len / 2.0) / fs
    bin_freqs = np.arange(cfg.freq_bins) * fs / cfg.window_len
    return Spectrogram(values, frame_times, bin_freqs)


def spectrogram_to_csv(spec: Spectrogram, lead: int = 0) -> str:
    """One lead as CSV with frames as columns.

    The header row is ``freq_hz/time_s`` followed by frame centre times;
    each following row starts with its bin frequency.
    """
    vals = spec.values[lead]
    lines = ["freq_hz/time_s," + ",".join(f"{t:.6g}" for t in spec.frame_times)]
    for k, freq in enumerate(spec.bin_freqs):
        lines.append(f"{freq:.6g}," + ",".join(f"{v:.6f}" for v in vals[k]))
    return "\n".join(lines) + "\n"
