"""Trainer configuration with the reference fine-tuning hyperparameters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

PathLike = Union[str, Path]

VIRTUAL_PREFIX = "virtual_prefix_params"
LOSS_ON_PREFIX = "loss_on_prefix_tokens"


class TrainerError(Exception):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 3
    learning_rate: float = 5e-6
    per_device_batch: int = 4
    grad_accum_steps: int = 8
    precision: str = "bf16"  # "bf16" or "fp32"
    max_grad_norm: float = 1.0
    max_length: int = 512
    prefix_mode: str = VIRTUAL_PREFIX
    prefix_length: int = 32
    seed: int = 0

    def validate(self) -> "TrainerConfig":
        if self.epochs < 0:
            raise TrainerError("epochs must be >= 0")
        for name in ("learning_rate", "per_device_batch", "grad_accum_steps",
                     "max_grad_norm", "max_length", "prefix_length"):
            if getattr(self, name) <= 0:
                raise TrainerError(f"{name} must be positive")
        if self.precision not in ("bf16", "fp32"):
            raise TrainerError(f"unknown precision {self.precision!r}")
        if self.prefix_mode not in (VIRTUAL_PREFIX, LOSS_ON_PREFIX):
            raise TrainerError(f"unknown prefix_mode {self.prefix_mode!r}")
        return self

    @property
    def effective_batch(self) -> int:
        return self.per_device_batch * self.grad_accum_steps

    def to_dict(self) -> dict:
        return asdict(self)


def load_trainer_config(path: PathLike) -> TrainerConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise TrainerError(f"{path}: config must be a JSON object")
    known = set(TrainerConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise TrainerError(f"{path}: unknown config keys {sorted(unknown)}")
    return TrainerConfig(**data).validate()
