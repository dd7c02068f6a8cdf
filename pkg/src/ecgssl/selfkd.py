"""Self-distillation pre-training with an EMA teacher and centred targets.

The student sees every augmented view; the teacher, an exponential moving
average of the student, sees only the two global views and never receives
gradients. Teacher logits are centred with a running batch mean and
sharpened with a low temperature before serving as cross-entropy targets.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .augment import TIME, AugmentSpec, make_view_batch
from .encoders import EncoderConfig, ProjectionHead, build_encoder
from .errors import ConfigurationError, NumericError, ParameterError, StateError
from .nn import Module
from .optim import Adam
from .stft import StftConfig, spectrogram
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class SelfKdConfig:
    K: int = 64
    tau_student: float = 0.1
    tau_teacher: float = 0.04
    ema_lambda: float = 0.99
    center_momentum: float = 0.9
    centering: bool = True
    steps: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    head_hidden: Tuple[int, ...] = (128, 128)

    def __post_init__(self):
        self.head_hidden = tuple(self.head_hidden)
        if self.K < 1:
            raise ParameterError("K must be positive")
        if not (0 < self.tau_teacher < self.tau_student):
            raise ParameterError("temperatures must satisfy 0 < tau_teacher < tau_student")
        if not 0 <= self.ema_lambda <= 1:
            raise ParameterError("ema_lambda must lie in [0, 1]")
        if not 0 <= self.center_momentum < 1:
            raise ParameterError("center_momentum must lie in [0, 1)")
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("steps >= 0, batch_size >= 1 and lr > 0 are required")


class KdNetwork(Module):
    """Backbone followed by the projection head."""

    def __init__(self, modality: str, enc_cfg: EncoderConfig, kd_cfg: SelfKdConfig,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.encoder = build_encoder(modality, enc_cfg, rng, dtype)
        self.head = ProjectionHead(enc_cfg.feature_dim, rng, kd_cfg.head_hidden, kd_cfg.K, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.encoder(x))


@dataclass
class SelfKdState:
    student: KdNetwork
    teacher: KdNetwork
    center: np.ndarray
    optimizer: Adam
    step: int = 0

    @classmethod
    def create(cls, modality: str, enc_cfg: EncoderConfig, kd_cfg: SelfKdConfig,
               rng: np.random.Generator, dtype=np.float32) -> "SelfKdState":
        student = KdNetwork(modality, enc_cfg, kd_cfg, rng, dtype)
        teacher = KdNetwork(modality, enc_cfg, kd_cfg, rng, dtype)
        teacher.load_state_dict({k: v.copy() for k, v in student.state_dict().items()})
        for p in teacher.parameters():
            p.requires_grad = False
        teacher.eval()
        center = np.zeros(kd_cfg.K, dtype=np.float64)
        return cls(student, teacher, center, Adam(student.parameters(), lr=kd_cfg.lr))


def teacher_probs(teacher_logits, center, tau_teacher: float) -> np.ndarray:
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    return T.softmax_np(t.astype(np.float64) - center, tau_teacher)


def kd_loss(teacher_logits, student_logits: Tensor, center, cfg: SelfKdConfig,
            n_global: int = 2) -> Tensor:
    """Mean cross-entropy H(P_t^g, P_s^v) over every (global g, view v) pair with v != g.

    Rows are view-major: rows ``[v*B:(v+1)*B]`` belong to view ``v``; the
    first ``n_global`` student views are the same global views the teacher saw.
    """
    if n_global < 2:
        raise ConfigurationError("self-distillation needs at least two global views")
    t_rows = teacher_logits.shape[0]
    if t_rows % n_global:
        raise ConfigurationError("teacher rows are not a multiple of the global view count")
    B = t_rows // n_global
    if student_logits.shape[0] % B or student_logits.shape[0] // B < n_global:
        raise ConfigurationError("student rows do not cover the teacher's global views")
    n_views = student_logits.shape[0] // B
    p_t = teacher_probs(teacher_logits, center, cfg.tau_teacher).astype(student_logits.dtype)
    log_p_s = T.log_softmax_t(student_logits, cfg.tau_student)
    # weight[v*B + b] = sum over global g != v of P_t^g[b], scaled by 1 / (pairs * B)
    targets = np.zeros(student_logits.shape, dtype=student_logits.dtype)
    n_pairs = 0
    for g in range(n_global):
        for v in range(n_views):
            if v == g:
                continue
            targets[v * B:(v + 1) * B] += p_t[g * B:(g + 1) * B]
            n_pairs += 1
    weights = Tensor(targets / (n_pairs * B))
    return T.tsum(weights * log_p_s) * -1.0


def mean_entropy(probs: np.ndarray) -> float:
    p = np.clip(probs, 1e-30, 1.0)
    return float(np.mean(-(probs * np.log(p)).sum(axis=-1)))


def update_teacher(state: SelfKdState, cfg: SelfKdConfig) -> None:
    """phi <- lambda * phi + (1 - lambda) * theta for every parameter and BN buffer."""
    lam = cfg.ema_lambda
    s_params = dict(state.student.named_parameters())
    t_params = dict(state.teacher.named_parameters())
    if s_params.keys() != t_params.keys():
        raise StateError("teacher and student parameter sets differ")
    for name, sp in s_params.items():
        tp = t_params[name]
        if tp.shape != sp.shape:
            raise StateError(f"teacher/student shape mismatch at {name}: {tp.shape} vs {sp.shape}")
        tp.data[...] = lam * tp.data + (1.0 - lam) * sp.data
    s_bufs = dict(state.student.named_buffers())
    for name, tb in state.teacher.named_buffers():
        tb[...] = lam * tb + (1.0 - lam) * s_bufs[name]


def update_center(state: SelfKdState, teacher_logits, cfg: SelfKdConfig) -> None:
    """center <- m * center + (1 - m) * batch mean of the teacher logits."""
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    batch_mean = t.astype(np.float64).mean(axis=0)
    m = cfg.center_momentum
    state.center = m * state.center + (1.0 - m) * batch_mean


def parameter_checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class PretrainResult:
    state: SelfKdState
    losses: List[float] = field(default_factory=list)
    teacher_entropy: List[float] = field(default_factory=list)

    def student_checkpoint(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state.student.state_dict().items()}

    def trace_csv(self) -> str:
        lines = ["step,loss,teacher_entropy"]
        for i, (l, h) in enumerate(zip(self.losses, self.teacher_entropy)):
            lines.append(f"{i},{l:.8f},{h:.8f}")
        return "\n".join(lines) + "\n"


def modality_inputs(records: np.ndarray, modality: str, stft_cfg: Optional[StftConfig],
                    fs: float) -> np.ndarray:
    """Network-ready arrays: raw leads for time, log spectrograms for timefreq."""
    records = np.asarray(records, dtype=np.float32)
    if modality == TIME:
        return records
    if stft_cfg is None:
        raise ConfigurationError("timefreq modality needs an StftConfig")
    return np.stack([spectrogram(r, stft_cfg, fs).values for r in records])


def train_step(state: SelfKdState, batch: np.ndarray, modality: str, aug: AugmentSpec,
               cfg: SelfKdConfig, rng: np.random.Generator) -> Tuple[float, float]:
    """One optimisation step on an already-prepared batch; returns (loss, teacher entropy)."""
    out_len = batch.shape[-1]
    vb = make_view_batch(batch, modality, aug, rng, out_len)
    student_in = Tensor(np.concatenate(vb.views, axis=0))
    teacher_in = Tensor(np.concatenate(vb.global_views(), axis=0))
    with no_grad():
        t_logits = state.teacher(teacher_in)
    state.student.train()
    s_logits = state.student(student_in)
    loss = kd_loss(t_logits, s_logits, state.center, cfg, vb.n_global)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite self-distillation loss at step {state.step}")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    update_teacher(state, cfg)
    if cfg.centering:
        update_center(state, t_logits, cfg)
    entropy = mean_entropy(teacher_probs(t_logits, state.center, cfg.tau_teacher))
    state.step += 1
    return value, entropy


def pretrain_modality(records: np.ndarray, modality: str, enc_cfg: EncoderConfig,
                      kd_cfg: SelfKdConfig, aug: AugmentSpec, seed: int,
                      stft_cfg: Optional[StftConfig] = None, fs: float = 500.0,
                      inputs: Optional[np.ndarray] = None) -> PretrainResult:
    """Unlabelled pre-training of one modality's student; labels are never read.

    ``records`` are [N, leads, n] time series at sampling rate ``fs``;
    ``inputs`` may supply precomputed network inputs for the modality.
    """
    if len(records) == 0 and inputs is None:
        raise ConfigurationError("pre-training needs at least one record")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    init_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    if inputs is None:
        inputs = modality_inputs(records, modality, stft_cfg, fs)
    state = SelfKdState.create(modality, enc_cfg, kd_cfg, init_rng)
    result = PretrainResult(state)
    n = len(inputs)
    bs = min(kd_cfg.batch_size, n)
    for step in range(kd_cfg.steps):
        idx = rng.choice(n, size=bs, replace=False)
        try:
            loss, ent = train_step(state, inputs[idx], modality, aug, kd_cfg, rng)
        except NumericError as exc:
            raise NumericError(f"pre-training aborted at step {step}: {exc}") from exc
        result.losses.append(loss)
        result.teacher_entropy.append(ent)
        if step % 50 == 0:
            logger.debug("pretrain %s step %d loss %.4f entropy %.4f", modality, step, loss, ent)
    return result
