"""Experiment configuration: flat ``section.key = value`` text files.

Defaults follow the published training recipe where it gives one
(alpha0=3e-4, t0=35, t1=65, P=64, K=4, 65 epochs). ``profile = desk``
switches to a CI-sized run before explicit keys are applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .embedder import OptimizerSchedule
from .errors import ConfigError
from .losses import LOSS_NAMES, GaussianMapConfig, PerturbationConfig
from .mining import BatchSpec, MiningConfig

PROFILES = {
    "full": {},
    "desk": {"batch.p_identities": "8", "batch.k_samples": "4", "train.epochs": "30",
             "data.n_identities": "20"},
}


@dataclass(frozen=True)
class DataConfig:
    # "synthetic" or a feature-file path
    source: str = "synthetic"
    n_identities: int = 160
    samples_per_identity: int = 8
    dim: int = 16
    cluster_std: float = 0.6
    center_scale: float = 1.0
    n_cameras: int = 2
    train_fraction: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64,)
    out_dim: int = 32
    activation: str = "relu"


@dataclass(frozen=True)
class LossConfig:
    name: str = "ate"
    epsilon_a: float = 1e-2
    margin: float = 0.3
    sigma_a: float = 1.0
    inner_steps: int = 50

    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(self.epsilon_a)

    def gaussian(self) -> GaussianMapConfig:
        return GaussianMapConfig(self.sigma_a, self.inner_steps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 65
    seeds: tuple[int, ...] = (0,)
    # evaluate on the test split every N epochs (0 = never)
    eval_every: int = 0


@dataclass(frozen=True)
class EvalConfig:
    exclude_same_camera_same_id: bool = True
    drop_empty_queries: bool = True


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    mining: MiningConfig = field(default_factory=MiningConfig)
    optim: OptimizerSchedule = field(default_factory=OptimizerSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.loss.name not in LOSS_NAMES:
            raise ConfigError(f"unknown loss {self.loss.name!r}")
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.train.seeds:
            raise ConfigError("train.seeds must not be empty")
        # surface invalid loss parameters at load time
        self.loss.perturbation()
        self.loss.gaussian()

    def with_overrides(self, pairs: dict[str, str]) -> "ExperimentConfig":
        return apply_overrides(self, pairs)


def _parse_value(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ == tuple[int, ...]:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {"int": int, "float": float, "str": str, "bool": bool,
          "tuple[int, ...]": tuple[int, ...]}


def _field_type(f: dataclasses.Field):
    t = f.type
    return _TYPES.get(t, t) if isinstance(t, str) else t


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    pairs = dict(pairs)
    profile = pairs.pop("profile", None)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        cfg = apply_overrides(cfg, PROFILES[profile])
    sections: dict[str, dict] = {}
    for key, raw in pairs.items():
        if "." not in key:
            raise ConfigError(f"key {key!r} must look like section.name")
        sec, name = key.split(".", 1)
        if sec not in {f.name for f in fields(cfg)}:
            raise ConfigError(f"unknown config section {sec!r}")
        sub = getattr(cfg, sec)
        ftypes = {f.name: _field_type(f) for f in fields(sub)}
        if name not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        sections.setdefault(sec, {})[name] = _parse_value(raw, ftypes[name], key)
    try:
        changed = {sec: replace(getattr(cfg, sec), **vals) for sec, vals in sections.items()}
        return replace(cfg, **changed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {no}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return apply_overrides(base or ExperimentConfig(), pairs)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in fields(cfg):
        sub = getattr(cfg, sec.name)
        for f in fields(sub):
            lines.append(f"{sec.name}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must be key=value")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()
