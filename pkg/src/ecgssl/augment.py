"""View-generating augmentations for self-distillation.

Time-domain views use cutout followed by additive Gaussian noise;
spectrogram views use a time band plus a frequency band cutout. Crops longer
than half the record are global (teacher-eligible), the rest are local.
All functions take the time axis as the last axis and draw every random
number from an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError

TIME = "time"
TIMEFREQ = "timefreq"
GLOBAL = "global"
LOCAL = "local"

# "full" is cutout + noise for time series and time + frequency cutout for spectrograms
TRANSFORMS = {
    TIME: ("none", "tc", "gn", "full"),
    TIMEFREQ: ("none", "tc", "fc", "full"),
}


@dataclass
class AugmentSpec:
    sigma: float = 0.05
    cutout_alpha_max: float = 0.5
    global_crop_range: Tuple[float, float] = (0.6, 1.0)
    local_crop_range: Tuple[float, float] = (0.05, 0.5)
    n_local_views: int = 4
    transform: str = "full"
    rng_seed: int = 0

    def __post_init__(self):
        self.global_crop_range = tuple(self.global_crop_range)
        self.local_crop_range = tuple(self.local_crop_range)
        g_lo, g_hi = self.global_crop_range
        l_lo, l_hi = self.local_crop_range
        if not (0.5 < g_lo <= g_hi <= 1.0):
            raise ParameterError(f"global crop range must lie in (0.5, 1], got {self.global_crop_range}")
        if not (0.0 < l_lo <= l_hi <= 0.5):
            raise ParameterError(f"local crop range must lie in (0, 0.5], got {self.local_crop_range}")
        if self.sigma < 0:
            raise ParameterError("sigma must be non-negative")
        if not 0 < self.cutout_alpha_max <= 1:
            raise ParameterError("cutout_alpha_max must be in (0, 1]")
        if self.n_local_views < 0:
            raise ParameterError("n_local_views must be non-negative")
        if self.transform not in ("none", "tc", "gn", "fc", "full"):
            raise ParameterError(f"unknown transform {self.transform!r}")


def draw_span(n: int, rng: np.random.Generator, alpha_max: float = 0.5) -> Tuple[int, int]:
    """Inclusive cutout span [t1, t1 + alpha] with alpha = floor(U(0, alpha_max) * n)."""
    alpha = min(int(np.floor(rng.uniform(0.0, alpha_max) * n)), n - 1)
    t1 = int(rng.integers(0, n - alpha))
    return t1, t1 + alpha


def time_cutout(x, rng: np.random.Generator, alpha_max: float = 0.5,
                span: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Zero an inclusive band of the last axis; ``span`` forces (t1, t2)."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 2:
        raise ParameterError("time_cutout needs at least 2 samples")
    t1, t2 = span if span is not None else draw_span(n, rng, alpha_max)
    out = x.copy()
    out[..., t1:t2 + 1] = 0
    return out


def gaussian_noise(x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    x = np.asarray(x)
    if sigma == 0:
        return x.copy()
    return (x + rng.normal(0.0, sigma, size=x.shape)).astype(x.dtype, copy=False)


def transform_t1(x, spec: AugmentSpec, rng: np.random.Generator,
                 span: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Time cutout, then additive noise over the whole segment (noise also lands in the zeroed band)."""
    out = np.asarray(x)
    if spec.transform in ("tc", "full"):
        out = time_cutout(out, rng, spec.cutout_alpha_max, span)
    if spec.transform in ("gn", "full"):
        out = gaussian_noise(out, spec.sigma, rng)
    return out.copy() if out is x else out


def freq_time_cutout(F, rng: np.random.Generator, alpha_max: float = 0.5,
                     t_span: Optional[Tuple[int, int]] = None,
                     f_span: Optional[Tuple[int, int]] = None,
                     time_band: bool = True, freq_band: bool = True) -> np.ndarray:
    """Zero a time band (all frequencies) and a frequency band (all times) of [..., freq, time]."""
    F = np.asarray(F)
    n_freq, n_time = F.shape[-2], F.shape[-1]
    if n_freq < 2 or n_time < 2:
        raise ParameterError("freq_time_cutout needs both axes >= 2")
    out = F.copy()
    if time_band:
        t1, t2 = t_span if t_span is not None else draw_span(n_time, rng, alpha_max)
        out[..., t1:t2 + 1] = 0
    if freq_band:
        f1, f2 = f_span if f_span is not None else draw_span(n_freq, rng, alpha_max)
        out[..., f1:f2 + 1, :] = 0
    return out


def transform_t2(F, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    return freq_time_cutout(F, rng, spec.cutout_alpha_max,
                            time_band=spec.transform in ("tc", "full"),
                            freq_band=spec.transform in ("fc", "full"))


def resample_last_axis(x: np.ndarray, out_len: int) -> np.ndarray:
    """Linear interpolation of the last axis onto ``out_len`` evenly spaced points."""
    m = x.shape[-1]
    if m == out_len:
        return x.copy()
    pos = np.linspace(0.0, m - 1, out_len)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, m - 1)
    frac = (pos - i0).astype(x.dtype)
    return x[..., i0] * (1 - frac) + x[..., i1] * frac


@dataclass
class View:
    payload: np.ndarray
    kind: str
    modality: str
    fraction: float = 1.0
    offset: int = 0


def crop_view(x, kind: str, spec: AugmentSpec, rng: np.random.Generator, out_len: int,
              modality: str = TIME, fraction: Optional[float] = None,
              offset: Optional[int] = None) -> View:
    """Random contiguous crop along the time axis, resampled to ``out_len``."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 4:
        raise ParameterError("crop_view needs a time length of at least 4")
    if kind not in (GLOBAL, LOCAL):
        raise ParameterError(f"view kind must be global or local, got {kind!r}")
    lo, hi = spec.global_crop_range if kind == GLOBAL else spec.local_crop_range
    r = float(rng.uniform(lo, hi)) if fraction is None else float(fraction)
    if (kind == GLOBAL and not r > 0.5) or (kind == LOCAL and not 0 < r <= 0.5):
        raise ParameterError(f"crop fraction {r} is inconsistent with a {kind} view")
    length = min(n, max(2, int(round(r * n))))
    start = int(rng.integers(0, n - length + 1)) if offset is None else int(offset)
    if not 0 <= start <= n - length:
        raise ParameterError(f"crop offset {start} out of range for length {length}")
    payload = resample_last_axis(x[..., start:start + length], out_len)
    return View(payload, kind, modality, r, start)


@dataclass
class ViewBatch:
    """Augmented views of one batch, view-major: ``views[v]`` has shape [B, ...].

    The first ``n_global`` entries are global views (fed to teacher and
    student), the rest local views (student only).
    """

    views: List[np.ndarray]
    kinds: List[str]
    modality: str
    n_global: int = 2
    fractions: List[List[float]] = field(default_factory=list)

    @property
    def n_views(self) -> int:
        return len(self.views)

    def global_views(self) -> List[np.ndarray]:
        return self.views[: self.n_global]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(self.modality.encode())
        for kind, v in zip(self.kinds, self.views):
            buf.write(kind.encode())
            buf.write(np.ascontiguousarray(v).tobytes())
        return buf.getvalue()


def augment(payload: np.ndarray, modality: str, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    if modality == TIME:
        return transform_t1(payload, spec, rng)
    return transform_t2(payload, spec, rng)


def make_view_batch(batch: Sequence[np.ndarray], modality: str, spec: AugmentSpec,
                    rng: np.random.Generator, out_len: int) -> ViewBatch:
    """Two global and ``spec.n_local_views`` local augmented views per record.

    ``batch`` is time series [B, leads, n] for ``modality="time"`` or
    spectrograms [B, leads, freq, frames] for ``modality="timefreq"``.
    """
    if modality not in TRANSFORMS:
        raise ParameterError(f"unknown modality {modality!r}")
    if spec.transform not in TRANSFORMS[modality]:
        raise ParameterError(f"transform {spec.transform!r} is not defined for {modality}")
    kinds = [GLOBAL, GLOBAL] + [LOCAL] * spec.n_local_views
    per_view: List[List[np.ndarray]] = [[] for _ in kinds]
    fractions: List[List[float]] = [[] for _ in kinds]
    for record in batch:
        for v, kind in enumerate(kinds):
            view = crop_view(record, kind, spec, rng, out_len, modality)
            per_view[v].append(augment(view.payload, modality, spec, rng))
            fractions[v].append(view.fraction)
    views = [np.stack(vs).astype(np.float32) for vs in per_view]
    return ViewBatch(views, kinds, modality, 2, fractions)
