"""Targeted poisoning attacks: Scaling, ALIE-style clamping, and edge-case data."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, ModelSpec, local_train


class TriggerLocation(str, enum.Enum):
    UR = "UR"
    LR = "LR"
    UL = "UL"
    LL = "LL"
    RANDOM = "Random"


class AttackKind(str, enum.Enum):
    SCALING = "Scaling"
    ALIE = "ALIE"
    EDGE = "Edge"


@dataclass(frozen=True)
class TriggerSpec:
    location: TriggerLocation = TriggerLocation.UR
    size: int = 2
    value: float | tuple[float, ...] = 1.0
    grid: tuple[int, int] = (8, 8)

    def __post_init__(self):
        object.__setattr__(self, "location", TriggerLocation(self.location))
        object.__setattr__(self, "grid", tuple(self.grid))
        if isinstance(self.value, (list, np.ndarray)):
            object.__setattr__(self, "value", tuple(float(v) for v in np.ravel(self.value)))
        H, W = self.grid
        if self.size < 1:
            raise ValueError("trigger size must be >= 1")
        if self.size > H or self.size > W:
            raise ValueError(f"trigger of size {self.size} does not fit a {H}x{W} grid")
        vals = np.atleast_1d(np.asarray(self.value, dtype=float))
        if vals.size not in (1, self.size * self.size):
            raise ValueError("trigger value must be a scalar or one value per cell")
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("trigger values must lie in [0, 1]")

    def patch(self) -> np.ndarray:
        vals = np.atleast_1d(np.asarray(self.value, dtype=float))
        if vals.size == 1:
            return np.full((self.size, self.size), vals[0])
        return vals.reshape(self.size, self.size)

    def origin(self, rng: np.random.Generator | None = None) -> tuple[int, int]:
        H, W = self.grid
        k = self.size
        loc = self.location
        if loc is TriggerLocation.UR:
            return 0, W - k
        if loc is TriggerLocation.LR:
            return H - k, W - k
        if loc is TriggerLocation.UL:
            return 0, 0
        if loc is TriggerLocation.LL:
            return H - k, 0
        if rng is None:
            raise ValueError("a Random trigger location needs an rng")
        return int(rng.integers(0, H - k + 1)), int(rng.integers(0, W - k + 1))


@dataclass(frozen=True)
class Schedule:
    """Attack every ``every`` rounds, or with probability ``probability`` per round."""

    every: int = 1
    probability: float | None = None

    def __post_init__(self):
        if self.every < 1:
            raise ValueError("attack frequency must be >= 1")
        if self.probability is not None and not 0 < self.probability <= 1:
            raise ValueError("attack probability must lie in (0, 1]")


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind = AttackKind.SCALING
    malicious_fraction: float = 0.2
    target_label: int = 2
    scale: float = 1.0
    alie_z: float = 1.0
    schedule: Schedule = field(default_factory=Schedule)
    trigger: TriggerSpec = field(default_factory=TriggerSpec)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if not 0 <= self.malicious_fraction < 1:
            raise ValueError("malicious fraction must lie in [0, 1)")
        if self.scale < 0:
            raise ValueError("scaling factor must be non-negative")


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.1


def embed_trigger(x: np.ndarray, spec: TriggerSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    H, W = spec.grid
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != H * W:
        raise ValueError(f"input length {x.shape[-1]} does not match grid {H}x{W}")
    r, c = spec.origin(rng)
    k = spec.size
    if r < 0 or c < 0 or r + k > H or c + k > W:
        raise ValueError("trigger footprint out of bounds")
    out = x.reshape(-1, H, W).copy()
    out[:, r : r + k, c : c + k] = spec.patch()
    return out.reshape(x.shape)


def embed_trigger_batch(X: np.ndarray, spec: TriggerSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Trigger every row; a Random location is drawn independently per row."""
    X = np.atleast_2d(X)
    if spec.location is not TriggerLocation.RANDOM:
        return embed_trigger(X, spec)
    return np.stack([embed_trigger(x, spec, rng) for x in X])


def poison_local_data(
    data: Dataset, spec: TriggerSpec, target: int, rng: np.random.Generator | None = None
) -> Dataset:
    if len(data) == 0:
        raise ValueError("cannot poison an empty dataset")
    poisoned = Dataset(embed_trigger_batch(data.X, spec, rng), np.full(len(data), target))
    return Dataset.concat(data, poisoned)


def poison_edge_data(data: Dataset, edge_set: Dataset, target: int) -> Dataset:
    if len(edge_set) == 0:
        raise ValueError("edge set is empty")
    relabeled = Dataset(edge_set.X, np.full(len(edge_set), target))
    if len(data) == 0:
        return relabeled
    return Dataset.concat(data, relabeled)


def craft_scaling_update(
    w_t: np.ndarray,
    data: Dataset,
    trigger: TriggerSpec,
    scale: float,
    train: TrainParams,
    spec: ModelSpec,
    target: int,
    seed: int,
) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    poisoned = poison_local_data(data, trigger, target, rng)
    local = local_train(poisoned, w_t, spec, train.epochs, train.batch_size, train.lr, seed)
    return scale * (local - w_t)


def alie_clamp(raw: np.ndarray, z: float) -> np.ndarray:
    """Clamp each row of ``raw`` into the coordinate-wise band mean +- z * std."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[0] < 2:
        raise ValueError("ALIE needs at least two malicious clients")
    mu = raw.mean(axis=0)
    sigma = raw.std(axis=0)
    return np.clip(raw, mu - z * sigma, mu + z * sigma)


def craft_alie_updates(
    w_t: np.ndarray,
    malicious_data: list[Dataset],
    trigger: TriggerSpec,
    z: float,
    train: TrainParams,
    spec: ModelSpec,
    target: int,
    seeds: list[int],
) -> list[np.ndarray]:
    if len(malicious_data) < 2:
        raise ValueError("ALIE needs at least two malicious clients")
    raw = np.stack(
        [
            craft_scaling_update(w_t, d, trigger, 1.0, train, spec, target, s)
            for d, s in zip(malicious_data, seeds)
        ]
    )
    return list(alie_clamp(raw, z))


def attack_active(t: int, schedule: Schedule, seed: int = 0) -> bool:
    """Whether the attackers poison round ``t``.

    The probability mode draws from a stream keyed on (seed, t), so the answer
    for a round does not depend on which other rounds were queried.
    """
    if schedule.probability is None:
        return t % schedule.every == 0
    rng = np.random.default_rng([seed, t])
    return bool(rng.random() < schedule.probability)
