"""Run configuration: a YAML mapping with a fixed schema.

Every key is optional; unknown keys are rejected.  Schema (defaults shown)::

    task: blobs              # blobs | tiles
    space: three-node        # space the desk sample is drawn from
    desk_size: 200           # functions in the benchmark; 0 = whole unique space
    features: both           # outputs | spectra | both (surrogate features)
    algorithm: knr           # knr | random (the algorithm whose trace is written)
    compare_features: true   # also replay the other feature sets side by side
    seed: 0
    runs_per_fn: 3
    bin_divisor: 4
    budget: 100
    trials: 20
    k: 3
    init: relu-plus-random   # relu-plus-random | baselines
    batch_width: 1
    workers: null            # null = AQS_WORKERS or available CPUs
    out_dir: artifacts
    train: {epochs: 20, batch_size: 64, momentum: 0.9, peak_lr: 0.05, warmup_epochs: 3}
    layout: {min_dist: 0.1, epochs: 200}
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .search import INIT_MODES
from .tensornet import TrainConfig
from .tensornet.data import TASKS

FEATURE_CHOICES = ("outputs", "spectra", "both")
ALGORITHM_CHOICES = ("knr", "random")


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    peak_lr: float = 0.05
    warmup_epochs: int = 3


@dataclass
class LayoutSection:
    min_dist: float = 0.1
    epochs: int = 200


@dataclass
class RunConfig:
    task: str = "blobs"
    space: str = "three-node"
    desk_size: int = 200
    features: str = "both"
    algorithm: str = "knr"
    compare_features: bool = True
    seed: int = 0
    runs_per_fn: int = 3
    bin_divisor: int = 4
    budget: int = 100
    trials: int = 20
    k: int = 3
    init: str = "relu-plus-random"
    batch_width: int = 1
    workers: int | None = None
    out_dir: str = "artifacts"
    train: TrainSection = field(default_factory=TrainSection)
    layout: LayoutSection = field(default_factory=LayoutSection)

    def validate(self) -> "RunConfig":
        def choice(name, value, options):
            if value not in options:
                raise ConfigError(f"{name}: {value!r} is not one of {list(options)}")

        choice("task", self.task, TASKS)
        choice("space", self.space, ("three-node", "four-node"))
        choice("features", self.features, FEATURE_CHOICES)
        choice("algorithm", self.algorithm, ALGORITHM_CHOICES)
        choice("init", self.init, INIT_MODES)
        for name in ("runs_per_fn", "bin_divisor", "budget", "trials", "k", "batch_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.desk_size, int) or self.desk_size < 0:
            raise ConfigError(f"desk_size: must be a non-negative integer, got {self.desk_size!r}")
        if self.workers is not None and (not isinstance(self.workers, int) or self.workers < 1):
            raise ConfigError(f"workers: must be a positive integer or null, got {self.workers!r}")
        if self.budget < 8:
            raise ConfigError("budget: must cover the 8-function initial set")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None
        if self.layout.epochs < 1 or not 0 <= self.layout.min_dist:
            raise ConfigError("layout: epochs must be positive and min_dist non-negative")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(**asdict(self.train), seed=self.seed)

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        env = os.environ.get("AQS_WORKERS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"AQS_WORKERS must be an integer, got {env!r}") from None
            if n < 1:
                raise ConfigError("AQS_WORKERS must be positive")
            return n
        return os.cpu_count() or 1

    def to_dict(self) -> dict:
        return asdict(self)

    def write_resolved(self, path: str | Path) -> None:
        d = self.to_dict()
        d["workers"] = self.resolved_workers()
        with open(path, "w") as fh:
            yaml.safe_dump(d, fh, sort_keys=True)


def _section(cls, name: str, raw) -> object:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    return cls(**raw)


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    train = _section(TrainSection, "train", raw.pop("train", None))
    layout = _section(LayoutSection, "layout", raw.pop("layout", None))
    try:
        cfg = RunConfig(**raw, train=train, layout=layout)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
