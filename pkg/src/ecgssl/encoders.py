"""Desk-scale backbones: a residual 1-D CNN for raw leads and a
squeeze-and-excitation residual 2-D CNN for spectrograms, plus the MLP
projection head used during self-distillation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .nn import MLP, BatchNorm, Conv1d, Conv2d, Linear, Module
from .tensor import Tensor


@dataclass
class EncoderConfig:
    stages: List[Tuple[int, int, int]] = field(
        default_factory=lambda: [(16, 2, 2), (32, 2, 2), (64, 2, 2)])
    stem_kernel: int = 7
    kernel: int = 3
    feature_dim: int = 64
    se_reduction: int = 4
    use_se: bool = True
    input_channels: int = 12
    stem_pool: bool = True

    def __post_init__(self):
        self.stages = [tuple(int(v) for v in s) for s in self.stages]
        if self.feature_dim <= 0:
            raise ParameterError("feature_dim must be positive")
        if not self.stages:
            raise ParameterError("at least one stage is required")
        for channels, blocks, stride in self.stages:
            if channels <= 0 or blocks <= 0 or stride <= 0:
                raise ParameterError(f"invalid stage {(channels, blocks, stride)}")
            if self.use_se and channels // self.se_reduction < 1:
                raise ParameterError(f"channels {channels} too small for se_reduction {self.se_reduction}")


# -- 1-D -----------------------------------------------------------------------

class ResBlock1d(Module):
    def __init__(self, c_in, c_out, stride, kernel, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, stride=stride, dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng, dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        if stride != 1 or c_in != c_out:
            self.short_conv = Conv1d(c_in, c_out, 1, rng, stride=stride, pad=0, dtype=dtype)
            self.short_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.short_conv = None

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.short_conv is None else self.short_bn(self.short_conv(x))
        return T.relu(h + skip)


class Encoder1d(Module):
    """Stem conv -> residual stages -> global average pool -> feature vector."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c0 = cfg.stages[0][0]
        self.stem = Conv1d(cfg.input_channels, c0, cfg.stem_kernel, rng, stride=2, dtype=dtype)
        self.stem_bn = BatchNorm(c0, dtype=dtype)
        blocks, c_in = [], c0
        for channels, n_blocks, stride in cfg.stages:
            for b in range(n_blocks):
                blocks.append(ResBlock1d(c_in, channels, stride if b == 0 else 1, cfg.kernel, rng, dtype))
                c_in = channels
        self.blocks = blocks
        self.fc = Linear(c_in, cfg.feature_dim, rng, dtype=dtype) if c_in != cfg.feature_dim else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.cfg.input_channels:
            raise DimensionError(
                f"encode_1d expects [B, {self.cfg.input_channels}, L], got {x.shape}")
        h = T.relu(self.stem_bn(self.stem(x)))
        if self.cfg.stem_pool and h.shape[-1] >= 3:
            h = T.max_pool1d(h, 3, 2, 1)
        for block in self.blocks:
            h = block(h)
        f = T.global_avg_pool(h)
        return f if self.fc is None else self.fc(f)


# -- 2-D -----------------------------------------------------------------------

class SEBlock(Module):
    """Channel recalibration: GAP -> FC(C, C/r) -> relu -> FC(C/r, C) -> sigmoid -> scale."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype=dtype)

    def excitation(self, u: Tensor) -> Tensor:
        s = T.global_avg_pool(u)
        return T.sigmoid(self.fc2(T.relu(self.fc1(s))))

    def forward(self, u: Tensor) -> Tensor:
        e = self.excitation(u)
        return u * T.reshape(e, e.shape + (1,) * (u.ndim - 2))


class ResBlock2d(Module):
    def __init__(self, c_in, c_out, stride, kernel, rng, se_reduction=4, use_se=True, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, kernel, rng, stride=stride, dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, kernel, rng, dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        self.se = SEBlock(c_out, se_reduction, rng, dtype) if use_se else None
        if stride != 1 or c_in != c_out:
            self.short_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, pad=0, dtype=dtype)
            self.short_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.short_conv = None

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        if self.se is not None:
            h = self.se(h)
        skip = x if self.short_conv is None else self.short_bn(self.short_conv(x))
        return T.relu(h + skip)


class Encoder2d(Module):
    """Stem conv -> SE residual stages -> global average pool -> feature vector."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c0 = cfg.stages[0][0]
        self.stem = Conv2d(cfg.input_channels, c0, cfg.kernel, rng, dtype=dtype)
        self.stem_bn = BatchNorm(c0, dtype=dtype)
        blocks, c_in = [], c0
        for channels, n_blocks, stride in cfg.stages:
            for b in range(n_blocks):
                blocks.append(ResBlock2d(c_in, channels, stride if b == 0 else 1, cfg.kernel, rng,
                                         cfg.se_reduction, cfg.use_se, dtype))
                c_in = channels
        self.blocks = blocks
        self.fc = Linear(c_in, cfg.feature_dim, rng, dtype=dtype) if c_in != cfg.feature_dim else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels:
            raise DimensionError(
                f"encode_2d expects [B, {self.cfg.input_channels}, F, T], got {x.shape}")
        h = T.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            h = block(h)
        f = T.global_avg_pool(h)
        return f if self.fc is None else self.fc(f)


class ProjectionHead(Module):
    """MLP from features to K prototype logits (softmax is applied by the trainer)."""

    def __init__(self, feature_dim: int, rng: np.random.Generator, hidden: Tuple[int, ...] = (128, 128),
                 K: int = 64, dtype=np.float32):
        super().__init__()
        self.K = K
        self.mlp = MLP([feature_dim, *hidden, K], rng, "relu", dtype)

    def forward(self, f: Tensor) -> Tensor:
        return self.mlp(f)


def build_encoder(modality: str, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> Module:
    from .augment import TIME
    return Encoder1d(cfg, rng, dtype) if modality == TIME else Encoder2d(cfg, rng, dtype)


def encode_1d(x, encoder: Encoder1d) -> Tensor:
    return encoder(T.tensor(x))


def encode_2d(F, encoder: Encoder2d) -> Tensor:
    return encoder(T.tensor(F))


def se_block(u, block: SEBlock) -> Tensor:
    return block(T.tensor(u))


def project(f, head: ProjectionHead) -> Tensor:
    return head(T.tensor(f))
