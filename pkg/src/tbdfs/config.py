"""Run configuration shared by training, evaluation and the CLI."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

VARIANTS = ("full", "-BFS", "-DFS", "path-avg", "paths-avg", "-time")


@dataclass(frozen=True)
class RunConfig:
    # model
    dim: int = 16
    heads: int = 2
    layers: int = 2
    fanout: int = 20
    alpha: float = 0.5
    path_mode: str = "attn"
    paths_mode: str = "attn"
    time_off: bool = False
    sampling: str = "recent"
    # optimisation
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    dropout: float = 0.1
    batch_size: int = 200
    epochs: int = 10
    patience: int = 5
    seed: int = 0
    # data
    train_frac: float = 0.70
    val_frac: float = 0.15
    bipartite: bool | None = None

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2:
            raise ConfigError(f"dim must be a positive even number, got {self.dim}")
        if self.heads < 1 or self.layers < 1 or self.fanout < 1:
            raise ConfigError("heads, layers and fanout must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size, patience must be >= 1 and epochs >= 0")
        if self.sampling not in ("recent", "uniform"):
            raise ConfigError(f"unknown sampling policy {self.sampling!r}")
        if self.path_mode not in ("attn", "mean") or self.paths_mode not in ("attn", "mean"):
            raise ConfigError("path_mode and paths_mode must be 'attn' or 'mean'")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        with Path(path).open() as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def variant(self, name: str) -> "RunConfig":
        """The ablation variant differing from this config in one component."""
        if name == "full":
            return self
        if name == "-BFS":
            return self.replace(alpha=0.0)
        if name == "-DFS":
            return self.replace(alpha=1.0)
        if name == "path-avg":
            return self.replace(path_mode="mean")
        if name == "paths-avg":
            return self.replace(paths_mode="mean")
        if name == "-time":
            return self.replace(time_off=True)
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")


def config_diff(a: RunConfig, b: RunConfig) -> dict:
    da, db = a.to_dict(), b.to_dict()
    return {k: [da[k], db[k]] for k in da if da[k] != db[k]}
