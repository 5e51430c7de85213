"""Federated training: non-iid partitioning, aggregation, rounds, checkpointing."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import attacks
from .attacks import AttackConfig, AttackKind, TrainParams
from .checkpoints import Checkpoint, CheckpointStore
from .model import Dataset, ModelSpec, local_train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartitionConfig:
    n_clients: int = 100
    num_groups: int = 10
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 2:
            raise ValueError("need at least two groups")
        lo = 1.0 / self.num_groups
        if not lo - 1e-12 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [{lo}, 1], got {self.rho}")


class AggKind(str, enum.Enum):
    FEDAVG = "FedAvg"
    TRIM = "TrimmedMean"
    MEDIAN = "CoordinateMedian"


@dataclass(frozen=True)
class AggRule:
    kind: AggKind = AggKind.FEDAVG
    trim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AggKind(self.kind))
        if self.trim < 0:
            raise ValueError("trim count must be non-negative")


@dataclass(frozen=True)
class RoundPlan:
    round: int
    selected: tuple[int, ...]
    lr: float
    attack_active: bool = False

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(sorted(int(c) for c in self.selected)))
        if not self.selected:
            raise ValueError("a round needs at least one selected client")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("duplicate client in selection")
        if self.lr <= 0:
            raise ValueError("global learning rate must be positive")


def group_probabilities(label: int, num_groups: int, rho: float) -> np.ndarray:
    p = np.full(num_groups, (1.0 - rho) / (num_groups - 1))
    p[label] = rho
    return p


def partition_noniid(dataset: Dataset, config: PartitionConfig) -> list[np.ndarray]:
    """Split example indices over clients with label skew ``rho``.

    Clients are shuffled into ``num_groups`` equal-as-possible groups. An
    example of label y goes to group y with probability rho and to each other
    group with probability (1 - rho) / (C - 1), then to a uniformly chosen
    client of that group. Returns one sorted index array per client.
    """
    n, C = config.n_clients, config.num_groups
    if n < C:
        raise ValueError(f"{n} clients cannot fill {C} groups")
    if len(dataset) and dataset.y.max() >= C:
        raise ValueError("label exceeds number of groups")
    rng = np.random.default_rng(config.seed)
    groups = np.array_split(rng.permutation(n), C)
    m = len(dataset)
    # own group w.p. rho, else one of the C-1 other groups uniformly
    own = rng.random(m) < config.rho
    shift = rng.integers(1, C, size=m)
    g = np.where(own, dataset.y, (dataset.y + shift) % C)
    sizes = np.array([len(grp) for grp in groups])
    slot = np.floor(rng.random(m) * sizes[g]).astype(np.int64)
    owner = np.array([groups[gi][si] for gi, si in zip(g, slot)], dtype=np.int64)
    parts = [np.flatnonzero(owner == c) for c in range(n)]
    empty = [c for c, p in enumerate(parts) if p.size == 0]
    if empty:
        raise ValueError(f"clients {empty[:5]} received no examples; use more data or fewer clients")
    return parts


def client_groups(config: PartitionConfig) -> list[np.ndarray]:
    """The client groups drawn by :func:`partition_noniid` for the same config."""
    rng = np.random.default_rng(config.seed)
    return np.array_split(rng.permutation(config.n_clients), config.num_groups)


def _stack(updates) -> np.ndarray:
    if isinstance(updates, Mapping):
        updates = [updates[k] for k in sorted(updates)]
    if len(updates) == 0:
        raise ValueError("nothing to aggregate")
    shapes = {np.shape(u) for u in updates}
    if len(shapes) != 1:
        raise ValueError(f"updates have mismatched shapes {sorted(shapes)}")
    return np.asarray(updates, dtype=np.float64)


def aggregate(rule: AggRule, updates: Sequence[np.ndarray] | Mapping[int, np.ndarray]) -> np.ndarray:
    """Combine client updates coordinate-wise.

    Each coordinate column is sorted before reduction, so the result is
    bit-identical under any reordering of ``updates``.
    """
    G = np.sort(_stack(updates), axis=0)
    m = G.shape[0]
    if rule.kind is AggKind.FEDAVG:
        return G.sum(axis=0) / m
    if rule.kind is AggKind.TRIM:
        k = rule.trim
        if 2 * k >= m:
            raise ValueError(f"cannot trim {k} from each side of {m} updates")
        return G[k : m - k].sum(axis=0) / (m - 2 * k)
    if m % 2:
        return G[m // 2].copy()
    return (G[m // 2 - 1] + G[m // 2]) / 2.0


def honest_update(w_t, data: Dataset, spec: ModelSpec, train: TrainParams, seed: int) -> np.ndarray:
    return local_train(data, w_t, spec, train.epochs, train.batch_size, train.lr, seed) - w_t


def client_seed(master: int, rnd: int, client: int) -> int:
    return int(np.random.SeedSequence([master, rnd, client]).generate_state(1)[0])


def run_round(
    w_t: np.ndarray,
    plan: RoundPlan,
    clients: Sequence[Dataset],
    spec: ModelSpec,
    train: TrainParams,
    rule: AggRule = AggRule(),
    attack: AttackConfig | None = None,
    malicious: frozenset[int] = frozenset(),
    edge_set: Dataset | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """One round: local training on ``plan.selected``, then w + lr * Agg(updates)."""
    updates: dict[int, np.ndarray] = {}
    attacking = attack is not None and plan.attack_active
    bad = [c for c in plan.selected if c in malicious] if attacking else []

    for c in plan.selected:
        if c in bad:
            continue
        updates[c] = honest_update(w_t, clients[c], spec, train, client_seed(seed, plan.round, c))

    if bad:
        seeds = [client_seed(seed, plan.round, c) for c in bad]
        y = attack.target_label
        if attack.kind is AttackKind.SCALING or (attack.kind is AttackKind.ALIE and len(bad) < 2):
            for c, s in zip(bad, seeds):
                updates[c] = attacks.craft_scaling_update(
                    w_t, clients[c], attack.trigger, attack.scale, train, spec, y, s
                )
        elif attack.kind is AttackKind.ALIE:
            crafted = attacks.craft_alie_updates(
                w_t, [clients[c] for c in bad], attack.trigger, attack.alie_z, train, spec, y, seeds
            )
            updates.update(zip(bad, crafted))
        else:
            if edge_set is None:
                raise ValueError("Edge attack needs an edge set")
            for c, s in zip(bad, seeds):
                poisoned = attacks.poison_edge_data(clients[c], edge_set, y)
                updates[c] = attack.scale * honest_update(w_t, poisoned, spec, train, s)

    updates = dict(sorted(updates.items()))
    return w_t + plan.lr * aggregate(rule, updates), updates


def select_clients(n_clients: int, fraction: float, rng: np.random.Generator) -> tuple[int, ...]:
    k = max(1, int(round(fraction * n_clients)))
    if k >= n_clients:
        return tuple(range(n_clients))
    return tuple(sorted(int(c) for c in rng.choice(n_clients, size=k, replace=False)))


def plan_rounds(
    rounds: int,
    n_clients: int,
    fraction: float,
    lr: float,
    seed: int,
    schedule: attacks.Schedule | None = None,
) -> list[RoundPlan]:
    """Round plans for rounds 1..R from dedicated seeded selection/attack streams."""
    sel_rng = np.random.default_rng([seed, 0x5E1])
    plans = []
    for t in range(1, rounds + 1):
        active = schedule is not None and attacks.attack_active(t, schedule, seed)
        plans.append(RoundPlan(t, select_clients(n_clients, fraction, sel_rng), lr, active))
    return plans


def run_training(
    w0: np.ndarray,
    plans: Sequence[RoundPlan],
    clients: Sequence[Dataset],
    spec: ModelSpec,
    train: TrainParams,
    rule: AggRule = AggRule(),
    attack: AttackConfig | None = None,
    malicious: frozenset[int] = frozenset(),
    edge_set: Dataset | None = None,
    store: CheckpointStore | None = None,
    cadence: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Run every plan in order; rounds divisible by ``cadence`` are checkpointed.

    A checkpoint for round t holds the pre-update global model w_t and the
    updates sent in round t.
    """
    w = np.array(w0, dtype=np.float64, copy=True)
    for plan in plans:
        w_next, updates = run_round(
            w, plan, clients, spec, train, rule, attack, malicious, edge_set, seed
        )
        if store is not None and cadence > 0 and plan.round % cadence == 0:
            try:
                store.save(Checkpoint(plan.round, plan.lr, w, updates))
            except OSError as e:
                raise OSError(f"failed to write checkpoint for round {plan.round}: {e}") from e
        if not np.all(np.isfinite(w_next)):
            raise FloatingPointError(f"global model diverged in round {plan.round}")
        w = w_next
    return w
