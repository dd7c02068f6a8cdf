"""Parameter containers and the layers the encoders are built from."""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import StateError
from .tensor import Tensor


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes (frozen ones included);
    buffers (batch-norm running statistics) live in ``self._buffers``.
    Child modules may be attributes or lists of modules.
    """

    training = True

    def __init__(self):
        self._buffers: Dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        targets = {name: ("param", p) for name, p in self.named_parameters()}
        targets.update({name: ("buffer", b) for name, b in self.named_buffers()})
        if strict:
            missing = set(targets) - set(state)
            unexpected = set(state) - set(targets)
            if missing or unexpected:
                raise StateError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            if name not in targets:
                continue
            kind, target = targets[name]
            current = target.data if kind == "param" else target
            value = np.asarray(value)
            if value.shape != current.shape:
                raise StateError(f"shape mismatch for {name}: {value.shape} vs {current.shape}")
            current[...] = value

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(n_out, n_in)), dtype)
        self.bias = _param(rng.uniform(-bound, bound, size=n_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: Optional[int] = None, bias: bool = False, dtype=np.float32):
        super().__init__()
        std = math.sqrt(2.0 / (c_in * kernel))
        self.weight = _param(rng.normal(0.0, std, size=(c_out, c_in, kernel)), dtype)
        self.bias = _param(np.zeros(c_out), dtype) if bias else None
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride, self.pad)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: Optional[int] = None, bias: bool = False, dtype=np.float32):
        super().__init__()
        std = math.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = _param(rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)), dtype)
        self.bias = _param(np.zeros(c_out), dtype) if bias else None
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm(Module):
    """Batch norm for [B, C, ...]; running statistics are buffers."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.weight = _param(np.ones(channels), dtype)
        self.bias = _param(np.zeros(channels), dtype)
        self._buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


class MLP(Module):
    """Stack of Linear layers with an activation between them (none after the last)."""

    def __init__(self, widths: List[int], rng: np.random.Generator, activation: str = "relu",
                 dtype=np.float32):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        act = T.relu if self.activation == "relu" else T.tanh
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
        return x
