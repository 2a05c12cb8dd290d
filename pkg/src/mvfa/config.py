"""Training configuration shared by the model, trainer, estimator, and CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .heads import MLP_SPECS

MODES = ("GAP", "MFA", "WO_FEAAUG", "WO_ADACAM")
HEAD_KINDS = ("single_fc", *(f"mlp:{k}" for k in MLP_SPECS),
              "proto_mce", "proto_dce")


@dataclass
class TrainConfig:
    mode: str = "MFA"
    head: str = "single_fc"
    k: int = 50
    region_sizes: tuple = (3, 5, 7, 9)
    batch_size: int = 64
    lr: float = 1e-4
    iterations: int = 2000
    seed: int = 0
    eta: float = 10.0
    grid_side: int = 7
    proto_dim: int = 64
    eval_every: int = 100

    def __post_init__(self):
        self.region_sizes = tuple(int(r) for r in self.region_sizes)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.region_sizes or any(r % 2 == 0 or r < 1
                                        for r in self.region_sizes):
            raise ConfigError(
                f"region sizes must be positive odd numbers, got {self.region_sizes}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.grid_side < 1:
            raise ConfigError(f"grid side must be >= 1, got {self.grid_side}")
        if self.proto_dim < 1:
            raise ConfigError(f"prototype dim must be >= 1, got {self.proto_dim}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance((v := getattr(self, f.name)),
                                               tuple) else v)
                for f in fields(self)}
