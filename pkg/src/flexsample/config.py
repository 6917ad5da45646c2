"""Experiment configuration: a flat dataclass mirrored by a YAML mapping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

METHODS = ("ce", "rs", "rw", "focal", "cb", "flexible")
PRETRAIN_MODES = ("ssl", "ce")
QUERY_MODES = ("mi", "random")


@dataclass
class ExperimentConfig:
    method: str = "flexible"
    trials: int = 5
    seed: int = 0

    # data
    ratio: float = 100.0
    k: int = 8
    d: int = 32
    N0: int = 1000
    data_path: str | None = None  # CSV embeddings; overrides the synthetic generator
    data_seed: int | None = None  # None: dataset drawn from the trial seed
    separation: float = 3.0
    head_modes: int = 4
    head_std: float = 7.0
    medium_std: float = 4.0
    tail_std: float = 1.5
    val_per_class: int = 10
    test_per_class: int = 20

    # classifier
    hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.2
    lr: float = 3e-4
    requery_lr: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 100
    stop_patience: int = 20
    # "full": every epoch runs ceil(|train split| / batch_size) steps whatever the
    # current training-set size; "pass": one pass over the current training set
    epoch_steps: str = "full"

    # flexible sampling
    pretrain: str = "ssl"
    selection: str = "anchor"
    querying: str = "mi"
    s: float = 0.1
    budget_fraction: float = 0.1
    warmup_epochs: int = 30
    query_patience: int = 10
    posterior_draws: int = 10
    min_val_per_class: int = 5  # below this, per-class accuracy comes from train

    # contrastive pretraining
    ssl_epochs: int = 20
    ssl_batch_size: int = 64
    ssl_lr: float = 1e-3
    temperature: float = 0.5
    proj_dim: int = 16
    noise_sigma: float = 0.1
    scale_jitter: tuple[float, float] = (0.9, 1.1)
    mask_prob: float = 0.1

    # baseline losses
    focal_gamma: float = 2.0
    cb_beta: float = 0.999

    # reporting
    head_threshold: int = 100
    tail_threshold: int = 20

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.scale_jitter = tuple(float(v) for v in self.scale_jitter)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.pretrain not in PRETRAIN_MODES:
            raise ConfigError(f"pretrain must be one of {PRETRAIN_MODES}")
        if self.selection not in ("anchor", "edge", "random"):
            raise ConfigError("selection must be anchor, edge or random")
        if self.querying not in QUERY_MODES:
            raise ConfigError(f"querying must be one of {QUERY_MODES}")
        if self.epoch_steps not in ("full", "pass"):
            raise ConfigError("epoch_steps must be 'full' or 'pass'")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 < self.s <= 1:
            raise ConfigError("s must lie in (0, 1]")
        if not 0 < self.budget_fraction <= 1:
            raise ConfigError("budget_fraction must lie in (0, 1]")
        if not self.head_threshold > self.tail_threshold > 0:
            raise ConfigError("need head_threshold > tail_threshold > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML mapping and apply ``overrides`` (None values are ignored)."""
    values = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        values.update(loaded)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig.from_dict(values)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
