"""Experiment configuration and its YAML form.

The YAML document mirrors :class:`ExperimentConfig` field for field; nested
sections are mappings, tuples are lists, enums are their string values. Any
key that is not a field is rejected with its dotted path.
"""
from __future__ import annotations

import dataclasses
import enum
import types
import typing
from dataclasses import dataclass, field

import numpy as np
import yaml

from .attacks import AttackConfig, TrainParams
from .data import DataConfig
from .detect import Mode
from .fl import AggKind, AggRule, PartitionConfig
from .influence import ProbeKind
from .model import ModelKind, ModelSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.LINEAR_SOFTMAX
    hidden: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int = 200
    global_lr: float = 1.0
    local_lr: float = 0.1
    batch_size: int = 32
    epochs: int = 1
    fraction: float = 1.0
    checkpoint_every: int = 10
    aggregation: AggKind = AggKind.FEDAVG
    trim: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "aggregation", AggKind(self.aggregation))
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if not 0 < self.fraction <= 1:
            raise ValueError("selection fraction must lie in (0, 1]")
        if self.global_lr <= 0 or self.local_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need batch_size >= 1 and epochs >= 0")

    @property
    def params(self) -> TrainParams:
        return TrainParams(self.epochs, self.batch_size, self.local_lr)

    @property
    def rule(self) -> AggRule:
        return AggRule(self.aggregation, self.trim)


@dataclass(frozen=True)
class ForensicsConfig:
    probe_kind: ProbeKind = ProbeKind.RANDOM_NONTARGET
    mode: Mode = Mode.TWO_SCORE
    min_cluster_size: int = 7
    alpha: float = 0.2
    probe_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "probe_kind", ProbeKind(self.probe_kind))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.probe_kind is ProbeKind.TARGET:
            raise ValueError("the non-target probe cannot be of kind TargetMisclassified")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    forensics: ForensicsConfig = field(default_factory=ForensicsConfig)

    def __post_init__(self):
        if self.partition.num_groups != self.data.num_classes:
            raise ValueError("partition.num_groups must equal data.num_classes")
        if tuple(self.attack.trigger.grid) != tuple(self.data.grid):
            raise ValueError("attack.trigger.grid must equal data.grid")
        if not 0 <= self.attack.target_label < self.data.num_classes:
            raise ValueError("attack.target_label is not a valid class")
        if self.training.rule.kind is AggKind.TRIM:
            m = max(1, int(round(self.training.fraction * self.partition.n_clients)))
            if 2 * self.training.trim >= m:
                raise ValueError(f"trim {self.training.trim} too large for {m} selected clients")

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            self.model.kind, self.data.input_dim, self.data.num_classes, self.model.hidden, self.model.seed
        )

    @property
    def malicious(self) -> frozenset[int]:
        """Client ids 0..m-1 with m = round(fraction * n_clients)."""
        m = int(round(self.attack.malicious_fraction * self.partition.n_clients))
        return frozenset(range(m))

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Same settings with every component seed derived from ``seed``."""
        sub = derive_seeds(seed)
        return dataclasses.replace(
            self,
            seed=seed,
            data=dataclasses.replace(self.data, seed=sub["data"]),
            partition=dataclasses.replace(self.partition, seed=sub["partition"]),
            model=dataclasses.replace(self.model, seed=sub["model"]),
            training=dataclasses.replace(self.training, seed=sub["training"]),
            forensics=dataclasses.replace(self.forensics, probe_seed=sub["probe"]),
        )


SEED_STREAMS = ("data", "partition", "model", "training", "probe")


def derive_seeds(seed: int) -> dict[str, int]:
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    state = np.random.SeedSequence(seed).generate_state(len(SEED_STREAMS))
    return {name: int(v) for name, v in zip(SEED_STREAMS, state)}


def default_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig().with_seed(seed)


# dict <-> dataclass


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        out[f.name] = _plain(getattr(obj, f.name))
    return out


def _plain(v):
    if dataclasses.is_dataclass(v):
        return to_dict(v)
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def from_dict(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path or 'config'}: {e}") from e


def _coerce(hint, value, path):
    if dataclasses.is_dataclass(hint):
        return from_dict(hint, value, path)
    if value is None:
        return None
    origin = typing.get_origin(hint)
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if origin in (typing.Union, types.UnionType):
        # float | tuple[float, ...] and friends
        if isinstance(value, list):
            return tuple(value)
        if len(args) == 1:
            return _coerce(args[0], value, path)
        return value
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is int and not (isinstance(value, int) and not isinstance(value, bool)):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_config(data) -> ExperimentConfig:
    """Build a config from a mapping; omitted fields take defaults, omitted
    component seeds are derived from the top-level ``seed``."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at the top level")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")
    # validate keys against the raw document before merging
    _check_keys(ExperimentConfig, data, "")
    return from_dict(ExperimentConfig, _merge(to_dict(default_config(seed)), data))


def _check_keys(cls, data, path):
    if not isinstance(data, dict):
        return
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    for k, v in data.items():
        if dataclasses.is_dataclass(hints[k]):
            _check_keys(hints[k], v, f"{path}.{k}" if path else k)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from e
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dump_config(config))
