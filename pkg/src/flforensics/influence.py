"""Per-client influence on a probe's loss, accumulated over checkpoints."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .checkpoints import Checkpoint
from .model import Example, ModelSpec, ce_grad

NORM_EPS = 1e-12


class ProbeKind(str, enum.Enum):
    TARGET = "TargetMisclassified"
    RANDOM_NONTARGET = "RandomNonTarget"
    TRUE_NONTARGET = "TrueNonTarget"


@dataclass(frozen=True)
class ProbeInput:
    input: np.ndarray
    label: int
    kind: ProbeKind = ProbeKind.TARGET

    def as_example(self) -> Example:
        return Example(np.asarray(self.input, dtype=np.float64), self.label)


@dataclass(frozen=True)
class InfluencePair:
    client: int
    s: float
    s_prime: float
    rounds_counted: int


def gen_random_nontarget(d: int, label: int, seed: int) -> ProbeInput:
    if d <= 0:
        raise ValueError("probe dimension must be positive")
    x = np.random.default_rng(seed).uniform(0.0, 1.0, size=d)
    return ProbeInput(x, label, ProbeKind.RANDOM_NONTARGET)


def normalize_update(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm <= NORM_EPS:
        return np.zeros_like(g)
    return g / norm


def checkpoint_scores(cp: Checkpoint, probe: ProbeInput, spec: ModelSpec) -> dict[int, float]:
    """One checkpoint's term, -lr * grad^T normalize(g), for each selected client."""
    if cp.num_params != spec.num_params:
        raise ValueError(f"checkpoint holds {cp.num_params} parameters, model has {spec.num_params}")
    grad = ce_grad(probe.as_example(), cp.global_model.astype(np.float64), spec)
    if not cp.updates:
        return {}
    ids = list(cp.updates)
    G = np.stack([cp.updates[c] for c in ids]).astype(np.float64)
    norms = np.linalg.norm(G, axis=1)
    dots = G @ grad
    safe = norms > NORM_EPS
    contrib = np.where(safe, -cp.lr * dots / np.where(safe, norms, 1.0), 0.0)
    return dict(zip(ids, contrib.tolist()))


def _accumulate(checkpoints: Iterable[Checkpoint], probes: list[ProbeInput], spec: ModelSpec):
    for probe in probes:
        if np.shape(probe.input) != (spec.input_dim,):
            raise ValueError(
                f"probe has shape {np.shape(probe.input)}, model expects ({spec.input_dim},)"
            )
    scores: list[dict[int, float]] = [{} for _ in probes]
    counts: dict[int, int] = {}
    last = None
    for cp in checkpoints:
        if last is not None and cp.round <= last:
            raise ValueError("checkpoints must arrive in ascending round order")
        last = cp.round
        for c in cp.updates:
            counts[c] = counts.get(c, 0) + 1
        for acc, probe in zip(scores, probes):
            for c, v in checkpoint_scores(cp, probe, spec).items():
                acc[c] = acc.get(c, 0.0) + v
    if last is None:
        raise ValueError("no checkpoints to score")
    return [dict(sorted(a.items())) for a in scores], dict(sorted(counts.items()))


def influence_scores(
    checkpoints: Iterable[Checkpoint], probe: ProbeInput, spec: ModelSpec
) -> tuple[dict[int, float], dict[int, int]]:
    """Scores per client plus how many checkpoints each client appeared in.

    ``checkpoints`` is consumed once, in ascending round order, which also
    fixes the summation order.
    """
    (scores,), counts = _accumulate(checkpoints, [probe], spec)
    return scores, counts


def influence_pairs(
    checkpoints: Iterable[Checkpoint],
    target: ProbeInput,
    nontarget: ProbeInput,
    spec: ModelSpec,
    clients: Iterable[int] | None = None,
) -> list[InfluencePair]:
    """(s, s') for every client seen in the store, in one pass over it.

    Pass ``clients`` to also emit zero-score pairs for clients never selected
    at a checkpoint.
    """
    if target.label != nontarget.label:
        raise ValueError("target and non-target probes must carry the same label")
    (s, s_prime), counts = _accumulate(checkpoints, [target, nontarget], spec)
    ids = set(s)
    if clients is not None:
        ids |= set(clients)
    return [
        InfluencePair(c, s.get(c, 0.0), s_prime.get(c, 0.0), counts.get(c, 0)) for c in sorted(ids)
    ]
