"""JSON run configuration holding every hyperparameter of a run."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .augment import AugmentSpec
from .encoders import EncoderConfig
from .errors import ConfigurationError
from .fusion import FinetuneConfig
from .selfkd import SelfKdConfig
from .stft import StftConfig


@dataclass
class DataConfig:
    n_records: int = 400
    fs: float = 500.0
    duration: float = 10.0
    noise: float = 0.05
    rate_jitter: float = 0.04
    multi_label_fraction: float = 0.1
    target_fs: float = 50.0        # networks see records resampled to this rate

    def __post_init__(self):
        if self.n_records <= 0:
            raise ConfigurationError("n_records must be positive")
        if not 0 < self.target_fs <= self.fs:
            raise ConfigurationError("target_fs must lie in (0, fs]")


@dataclass
class GridConfig:
    variants: List[str] = field(default_factory=lambda: ["T", "S", "TSC", "TSG"])
    transform_ablation: bool = True


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    stft: StftConfig = field(default_factory=lambda: StftConfig(window_len=32, hop=16))
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    encoder_time: EncoderConfig = field(default_factory=EncoderConfig)
    encoder_freq: EncoderConfig = field(default_factory=EncoderConfig)
    selfkd: SelfKdConfig = field(default_factory=lambda: SelfKdConfig(steps=100))
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    variant: str = "TSG"
    folds: int = 10
    seed: int = 0
    data_dir: Optional[str] = None
    out_dir: str = "runs"

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        return _build(cls, d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"selfkd.steps": 1}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigurationError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigurationError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigurationError(f"expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        ftype = names[name].type
        target = _NESTED.get(ftype if isinstance(ftype, str) else getattr(ftype, "__name__", ""))
        kwargs[name] = _build(target, value) if target is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid {cls.__name__}: {exc}") from exc


_NESTED = {
    "DataConfig": DataConfig,
    "StftConfig": StftConfig,
    "AugmentSpec": AugmentSpec,
    "EncoderConfig": EncoderConfig,
    "SelfKdConfig": SelfKdConfig,
    "FinetuneConfig": FinetuneConfig,
    "GridConfig": GridConfig,
}
