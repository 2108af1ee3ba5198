"""Run configuration: one JSON document covering model, training, loss and data."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import atomic_write_bytes
from .network import ModelConfig
from .sfa import SFAPattern, parse_pattern
from .train import LossConfig, TrainConfig

OUTPUT_ROOT_ENV = "USDEMOSAIC_OUTPUT_ROOT"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass
class RunConfig:
    pattern: str = "5x5"
    manifest: str | None = None
    out: str | None = None
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def resolve_pattern(self) -> SFAPattern:
        return parse_pattern(self.pattern)

    def model_config(self) -> ModelConfig:
        return ModelConfig.for_pattern(self.resolve_pattern(), **self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["sei_max"] = _encode_float(self.train.sei_max)
        return d

    def snapshot(self, path) -> None:
        payload = {**self.to_dict(), "model_resolved": self.model_config().to_dict()}
        atomic_write_bytes(path, json.dumps(payload, indent=2).encode())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d.pop("model_resolved", None)
        train = dict(d.pop("train", {}))
        if "sei_max" in train:
            train["sei_max"] = float(train["sei_max"])
        return cls(train=TrainConfig(**train), loss=LossConfig(**d.pop("loss", {})), **d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _encode_float(x: float):
    return x if np.isfinite(x) else str(x)


MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"layout", "bands"}
