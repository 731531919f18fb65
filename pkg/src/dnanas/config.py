"""Run configuration: search space plus data, training, evaluation and bench settings."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .space import SupernetConfig, desk_config


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    kind: str = "synthetic"  # synthetic | cifar10
    path: str | None = None
    class_count: int = 10
    images_per_class: int = 60
    test_per_class: int = 40
    size: int = 16
    noise: float = 0.75
    amplitude_jitter: float = 0.5
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class TeacherConfig:
    epochs: int = 12
    batch_size: int = 64
    lr: float = 0.005
    lr_decay: float = 0.9
    floor: float = 0.85
    kernel: int = 3
    expansion: int = 6


@dataclass
class DistillConfig:
    epochs: int = 20
    batch_size: int = 8
    lr_first: float = 0.002
    lr_rest: float = 0.005
    lr_decay: float = 0.9
    strategy: str = "dna"


@dataclass
class SposConfig:
    batch_size: int = 64
    lr: float = 0.005
    lr_decay: float = 0.9
    epochs: int | None = None  # None: sum of the per-block distillation epochs
    calibration_batches: int = 4


@dataclass
class EvalConfig:
    batch_size: int = 128
    memory_cap_mb: float = 1024.0


@dataclass
class BenchConfig:
    k: int = 16
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.005
    lr_decay: float = 0.95
    eval_split: str = "test"
    seed: int = 0


_SECTIONS = {
    "data": DataConfig,
    "teacher": TeacherConfig,
    "distill": DistillConfig,
    "spos": SposConfig,
    "evaluate": EvalConfig,
    "bench": BenchConfig,
}


@dataclass
class RunConfig:
    space: SupernetConfig = field(default_factory=lambda: desk_config(input_size=16))
    data: DataConfig = field(default_factory=DataConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    spos: SposConfig = field(default_factory=SposConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    seed: int = 0

    def __post_init__(self):
        if self.data.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"data.kind must be synthetic or cifar10, got {self.data.kind!r}")
        if self.data.kind == "synthetic" and self.data.size != self.space.input_size:
            raise ConfigError(f"data.size {self.data.size} != space.input_size {self.space.input_size}")
        if self.data.kind == "synthetic" and self.data.class_count != self.space.num_classes:
            raise ConfigError("data.class_count must equal space.num_classes")
        if self.distill.strategy not in ("dna", "s1", "s2"):
            raise ConfigError(f"unknown distill strategy {self.distill.strategy!r}")
        if self.bench.eval_split not in ("val", "test"):
            raise ConfigError(f"bench.eval_split must be val or test, got {self.bench.eval_split!r}")
        if self.distill.epochs < 0 or self.teacher.epochs < 0 or self.bench.epochs < 0:
            raise ConfigError("epoch counts must be non-negative")

    @property
    def spos_epochs(self) -> int:
        if self.spos.epochs is not None:
            return self.spos.epochs
        return self.distill.epochs * len(self.space.blocks)

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "space": self.space.to_dict()}
        for name in _SECTIONS:
            d[name] = dataclasses.asdict(getattr(self, name))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(_SECTIONS) - {"space", "seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {"seed": int(d.get("seed", 0))}
        try:
            if "space" in d:
                kw["space"] = SupernetConfig.from_dict(d["space"])
            for name, klass in _SECTIONS.items():
                if name in d:
                    sec = d[name] or {}
                    allowed = {f.name for f in dataclasses.fields(klass)}
                    bad = set(sec) - allowed
                    if bad:
                        raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
                    kw[name] = klass(**sec)
            return cls(**kw)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def canonical(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(raw or {})
