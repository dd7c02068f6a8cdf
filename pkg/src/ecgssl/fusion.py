"""Multi-label fine-tuning heads: single-modality, concatenation and gate fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .nn import MLP, Module
from .optim import Adam
from .tensor import Tensor

VARIANTS = ("T", "S", "TSC", "TSG")
BCE_EPS = 1e-7


class GateFusion(Module):
    """Soft attention over two modality features with a shared scorer.

    Each feature gets a scalar score from the same tanh MLP; a softmax over
    the two scores gives per-record weights (w1, w2) that scale the features
    before they are concatenated.
    """

    def __init__(self, feature_dim: int, rng: np.random.Generator, hidden: int = 32, dtype=np.float32):
        super().__init__()
        self.feature_dim = feature_dim
        self.scorer = MLP([feature_dim, hidden, 1], rng, "tanh", dtype)

    def forward(self, f1: Tensor, f2: Tensor, weights: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        if f1.shape != f2.shape:
            raise DimensionError(f"gate fusion needs equal feature shapes, got {f1.shape} and {f2.shape}")
        if f1.shape[1] != self.feature_dim:
            raise DimensionError(f"expected feature_dim {self.feature_dim}, got {f1.shape[1]}")
        if weights is None:
            scores = T.concat([self.scorer(f1), self.scorer(f2)], axis=1)
            w = T.softmax_t(scores, 1.0)
        else:
            w = Tensor(np.broadcast_to(np.asarray(weights, dtype=f1.dtype), (f1.shape[0], 2)).copy())
        fused = T.concat([f1 * w[:, 0:1], f2 * w[:, 1:2]], axis=1)
        return fused, w


def gate_fuse(f1, f2, gate: GateFusion, weights=None) -> Tuple[Tensor, Tensor]:
    return gate(T.tensor(f1), T.tensor(f2), weights)


class Classifier(Module):
    """MLP producing per-class logits; probabilities are independent sigmoids."""

    def __init__(self, n_in: int, n_classes: int, rng: np.random.Generator, hidden: int = 128,
                 dtype=np.float32):
        super().__init__()
        self.mlp = MLP([n_in, hidden, n_classes], rng, "relu", dtype)

    def forward(self, f: Tensor) -> Tensor:
        return T.sigmoid(self.mlp(f))


@dataclass
class Prediction:
    probabilities: np.ndarray
    threshold: float = 0.5

    @property
    def decisions(self) -> np.ndarray:
        return (self.probabilities >= self.threshold).astype(np.int64)

    @property
    def n_classes(self) -> int:
        return self.probabilities.shape[1]


def classify(fused, classifier: Classifier, threshold: float = 0.5) -> Prediction:
    with T.no_grad():
        probs = classifier(T.tensor(fused))
    return Prediction(probs.data.astype(np.float64), threshold)


def bce_loss(probs: Tensor, labels, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy over every (record, class) cell, probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise DimensionError(f"labels {y.shape} do not match predictions {probs.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    p = T.clip(probs, eps, 1.0 - eps)
    yt = Tensor(y)
    ll = yt * T.log(p) + (1.0 - yt) * T.log(1.0 - p)
    return T.mean(ll) * -1.0


class FusionModel(Module):
    """Encoders for the modalities a variant uses, optional gate, and the classifier."""

    def __init__(self, variant: str, time_encoder: Optional[Module], freq_encoder: Optional[Module],
                 feature_dim: int, n_classes: int, rng: np.random.Generator, hidden: int = 128,
                 gate_hidden: int = 32, dtype=np.float32):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if variant in ("T", "TSC", "TSG") and time_encoder is None:
            raise ConfigurationError(f"variant {variant} needs a time-series encoder")
        if variant in ("S", "TSC", "TSG") and freq_encoder is None:
            raise ConfigurationError(f"variant {variant} needs a spectrogram encoder")
        self.variant = variant
        self.time_encoder = time_encoder if variant != "S" else None
        self.freq_encoder = freq_encoder if variant != "T" else None
        self.gate = GateFusion(feature_dim, rng, gate_hidden, dtype) if variant == "TSG" else None
        n_in = feature_dim if variant in ("T", "S") else 2 * feature_dim
        self.classifier = Classifier(n_in, n_classes, rng, hidden, dtype)

    def features(self, x_time: Optional[Tensor], x_freq: Optional[Tensor],
                 gate_weights: Optional[np.ndarray] = None) -> Tuple[Tensor, Optional[Tensor]]:
        if self.variant == "T":
            return self.time_encoder(x_time), None
        if self.variant == "S":
            return self.freq_encoder(x_freq), None
        f1 = self.time_encoder(x_time)
        f2 = self.freq_encoder(x_freq)
        if self.variant == "TSC":
            return T.concat([f1, f2], axis=1), None
        return self.gate(f1, f2, gate_weights)

    def forward(self, x_time: Optional[Tensor], x_freq: Optional[Tensor],
                gate_weights: Optional[np.ndarray] = None) -> Tensor:
        fused, _ = self.features(x_time, x_freq, gate_weights)
        return self.classifier(fused)


# -- fine-tuning -----------------------------------------------------------------

@dataclass
class FinetuneConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    hidden: int = 128
    gate_hidden: int = 32
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and lr > 0 are required")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must lie in (0, 1)")


def encoder_state(checkpoint: dict, prefix: str = "encoder.") -> dict:
    """Backbone weights from a student checkpoint (projection head dropped)."""
    state = {k[len(prefix):]: v for k, v in checkpoint.items() if k.startswith(prefix)}
    if not state:
        raise ConfigurationError("checkpoint holds no encoder weights")
    return state


def _batch(x: Optional[np.ndarray], idx) -> Optional[Tensor]:
    return None if x is None else Tensor(x[idx])


def train_model(model: FusionModel, x_time: Optional[np.ndarray], x_freq: Optional[np.ndarray],
                labels: np.ndarray, cfg: FinetuneConfig, rng: np.random.Generator,
                steps: Optional[int] = None) -> list:
    """End-to-end BCE training of every parameter; returns the per-step loss trace.

    Runs ``cfg.epochs`` shuffled epochs, or exactly ``steps`` mini-batches when given.
    """
    n = len(labels)
    opt = Adam(model.parameters(), lr=cfg.lr)
    bs = min(cfg.batch_size, n)
    trace = []
    model.train()

    def batches():
        while True:
            order = rng.permutation(n)
            for start in range(0, n - bs + 1, bs):
                yield order[start:start + bs]

    total = steps if steps is not None else cfg.epochs * max(1, n // bs)
    for _, idx in zip(range(total), batches()):
        probs = model(_batch(x_time, idx), _batch(x_freq, idx))
        loss = bce_loss(probs, labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(loss.item())
    model.eval()
    return trace


def predict_proba(model: FusionModel, x_time: Optional[np.ndarray], x_freq: Optional[np.ndarray],
                  batch_size: int = 64, gate_weights: Optional[np.ndarray] = None) -> np.ndarray:
    model.eval()
    n = len(x_time) if x_time is not None else len(x_freq)
    out = []
    with T.no_grad():
        for start in range(0, n, batch_size):
            idx = slice(start, start + batch_size)
            out.append(model(_batch(x_time, idx), _batch(x_freq, idx), gate_weights).data)
    return np.concatenate(out).astype(np.float64)
