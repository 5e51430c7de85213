"""Malicious-client detection from two-dimensional influence scores."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hdbscan import NOISE, hdbscan
from .influence import InfluencePair


class Mode(str, enum.Enum):
    TWO_SCORE = "TwoScore"
    SINGLE_SCORE = "SingleScore"


class ProbeClass(str, enum.Enum):
    TARGET = "TargetInput"
    NON_TARGET = "NonTargetInput"


@dataclass(frozen=True)
class ScaledPoint:
    client: int
    u: float
    v: float


@dataclass
class DetectionReport:
    mode: Mode
    clients: list[int]
    labels: dict[int, int]
    n_clusters: int
    potential_clusters: list[int]
    cluster_ratios: dict[int, float]
    outlier_ratios: dict[int, float]
    threshold: float | None
    predicted: set[int]
    duplicated: bool = False
    events: list[str] = field(default_factory=list)

    @property
    def outliers(self) -> list[int]:
        return [c for c in self.clients if self.labels[c] == NOISE]

    def members(self, cluster: int) -> list[int]:
        return [c for c in self.clients if self.labels[c] == cluster]


def _spans(pairs: Sequence[InfluencePair]):
    s = np.array([p.s for p in pairs], dtype=np.float64)
    sp = np.array([p.s_prime for p in pairs], dtype=np.float64)
    return s, sp, s.max() - s.min(), sp.max() - sp.min()


def scale_scores(pairs: Sequence[InfluencePair]) -> tuple[list[ScaledPoint], list[str]]:
    """Divide each axis by its span over all clients; a zero span zeroes that axis."""
    if len(pairs) < 2:
        raise ValueError("scaling needs at least two clients")
    s, sp, span_s, span_sp = _spans(pairs)
    events = []
    if span_s > 0:
        u = s / span_s
    else:
        u = np.zeros_like(s)
        events.append("zero span on s axis; scaled s set to 0")
    if span_sp > 0:
        v = sp / span_sp
    else:
        v = np.zeros_like(sp)
        events.append("zero span on s' axis; scaled s' set to 0")
    points = [ScaledPoint(p.client, float(a), float(b)) for p, a, b in zip(pairs, u, v)]
    return points, events


def _cluster(coords: np.ndarray, min_cluster_size: int) -> tuple[np.ndarray, bool]:
    n = coords.shape[0]
    if n < 2 * min_cluster_size:
        # each score appears twice; both copies share a label
        labels = hdbscan(np.repeat(coords, 2, axis=0), min_cluster_size).labels[::2]
        return labels, True
    return hdbscan(coords, min_cluster_size).labels, False


def cluster_clients(pairs: Sequence[InfluencePair], min_cluster_size: int, mode: Mode = Mode.TWO_SCORE):
    points, events = scale_scores(pairs)
    if mode is Mode.TWO_SCORE:
        coords = np.array([[p.u, p.v] for p in points])
    else:
        coords = np.array([[p.u] for p in points])
    labels, duplicated = _cluster(coords, min_cluster_size)
    if duplicated:
        events.append(f"{len(pairs)} clients < 2*min_cluster_size; scores duplicated before clustering")
    return labels, duplicated, events


def _potential(pairs, labels) -> list[int]:
    s = np.array([p.s for p in pairs])
    return [int(c) for c in np.unique(labels[labels != NOISE]) if s[labels == c].mean() > 0]


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0 else float("nan")


def detect_malicious(pairs: Sequence[InfluencePair], min_cluster_size: int = 7) -> DetectionReport:
    """Cluster the scaled (s, s') scores, then apply :func:`ratio_rule`."""
    pairs = list(pairs)
    labels, duplicated, events = cluster_clients(pairs, min_cluster_size, Mode.TWO_SCORE)
    report = ratio_rule(pairs, labels)
    report.duplicated = duplicated
    report.events[:0] = events
    return report


def ratio_rule(pairs: Sequence[InfluencePair], labels) -> DetectionReport:
    """Flag low s'/s clusters and outliers given a cluster labeling (NOISE = -1).

    Potential clusters are those with positive mean s. Their pooled ratio
    sum(s') / sum(s) is the threshold; a potential cluster, or an outlier with
    s > 0, is flagged when its own ratio is at most the threshold.
    """
    pairs = list(pairs)
    labels = np.asarray(labels, dtype=np.int64)
    s = np.array([p.s for p in pairs])
    sp = np.array([p.s_prime for p in pairs])
    ids = [p.client for p in pairs]
    potential = _potential(pairs, labels)
    events: list[str] = []

    ratios = {c: _ratio(sp[labels == c].sum(), s[labels == c].sum()) for c in potential}
    threshold = None
    predicted: set[int] = set()
    outlier_ratios: dict[int, float] = {}
    if not potential:
        events.append("no cluster with positive mean s; threshold undefined")
    else:
        mask = np.isin(labels, potential)
        den = s[mask].sum()
        if den <= 0:
            events.append("pooled s of potential clusters is not positive; threshold undefined")
        else:
            threshold = float(sp[mask].sum() / den)
            for c in potential:
                if s[labels == c].sum() == 0:
                    events.append(f"cluster {c} has zero total s; treated as benign")
                elif ratios[c] <= threshold:
                    predicted.update(ids[i] for i in np.flatnonzero(labels == c))
            for i in np.flatnonzero(labels == NOISE):
                if s[i] <= 0:
                    continue
                r = float(sp[i] / s[i])
                outlier_ratios[ids[i]] = r
                if r <= threshold:
                    predicted.add(ids[i])

    return DetectionReport(
        mode=Mode.TWO_SCORE,
        clients=ids,
        labels=dict(zip(ids, labels.tolist())),
        n_clusters=int(labels.max(initial=-1) + 1),
        potential_clusters=potential,
        cluster_ratios={c: float(r) for c, r in ratios.items()},
        outlier_ratios=outlier_ratios,
        threshold=threshold,
        predicted=predicted,
        events=events,
    )


def detect_single_score(pairs: Sequence[InfluencePair], min_cluster_size: int = 7) -> DetectionReport:
    """Target-probe-only variant: every cluster with positive mean s is flagged."""
    pairs = list(pairs)
    labels, duplicated, events = cluster_clients(pairs, min_cluster_size, Mode.SINGLE_SCORE)
    ids = [p.client for p in pairs]
    potential = _potential(pairs, labels)
    predicted = {ids[i] for i in np.flatnonzero(np.isin(labels, potential))}
    return DetectionReport(
        mode=Mode.SINGLE_SCORE,
        clients=ids,
        labels=dict(zip(ids, labels.tolist())),
        n_clusters=int(labels.max(initial=-1) + 1),
        potential_clusters=potential,
        cluster_ratios={},
        outlier_ratios={},
        threshold=None,
        predicted=predicted,
        duplicated=duplicated,
        events=events,
    )


def classify_probe(pairs: Sequence[InfluencePair], min_cluster_size: int = 7, alpha: float = 0.2) -> ProbeClass:
    """Non-target when every potential cluster's s'/s ratio lies in [alpha, 1/alpha]."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    report = detect_malicious(pairs, min_cluster_size)
    return classify_ratios(report.cluster_ratios.values(), alpha)


def classify_ratios(ratios, alpha: float) -> ProbeClass:
    for r in ratios:
        if not alpha <= r <= 1.0 / alpha:
            return ProbeClass.TARGET
    return ProbeClass.NON_TARGET
