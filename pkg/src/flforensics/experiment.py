"""End-to-end runs: data, poisoned training, forensics, metrics, recovery."""
from __future__ import annotations

import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .attacks import AttackKind, embed_trigger_batch
from .checkpoints import CheckpointStore
from .config import ExperimentConfig, to_dict
from .data import SyntheticTask, load_task
from .detect import DetectionReport, Mode, ProbeClass, classify_ratios, detect_malicious, detect_single_score
from .fl import partition_noniid, plan_rounds, run_training
from .influence import InfluencePair, ProbeInput, ProbeKind, gen_random_nontarget, influence_pairs
from .model import Dataset, ModelSpec, accuracy, init_model, predict

log = logging.getLogger(__name__)

OK = "ok"
NO_TARGET = "no misclassified target input"


@dataclass(frozen=True)
class DetectionMetrics:
    dacc: float
    fpr: float
    fnr: float
    tp: int
    fp: int
    tn: int
    fn: int


def compute_detection_metrics(
    predicted: Iterable[int], malicious: Iterable[int], clients: Iterable[int]
) -> DetectionMetrics:
    """DACC = (TP+TN)/n, FPR = FP/(FP+TN), FNR = FN/(FN+TP); an empty denominator gives 0."""
    clients = set(clients)
    pred, bad = set(predicted), set(malicious)
    if not pred <= clients or not bad <= clients:
        raise ValueError("predicted and malicious sets must be subsets of the clients")
    if not clients:
        raise ValueError("no clients")
    tp = len(pred & bad)
    fp = len(pred - bad)
    fn = len(bad - pred)
    tn = len(clients) - tp - fp - fn
    return DetectionMetrics(
        dacc=(tp + tn) / len(clients),
        fpr=fp / (fp + tn) if fp + tn else 0.0,
        fnr=fn / (fn + tp) if fn + tp else 0.0,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def compute_asr(w: np.ndarray, probes, target: int, spec: ModelSpec) -> float:
    """Fraction of ``probes`` (array of inputs or a Dataset) predicted as ``target``."""
    X = probes.X if isinstance(probes, Dataset) else np.atleast_2d(probes)
    if X.shape[0] == 0:
        raise ValueError("ASR needs at least one target input")
    return float(np.mean(predict(X, w, spec) == target))


# scenario


@dataclass
class Scenario:
    config: ExperimentConfig
    task: SyntheticTask
    parts: list[np.ndarray]
    clients: list[Dataset]
    spec: ModelSpec

    @property
    def malicious(self) -> frozenset[int]:
        return self.config.malicious

    @property
    def target_label(self) -> int:
        return self.config.attack.target_label

    def target_inputs(self) -> np.ndarray:
        """Inputs the attack wants classified as y: edge test examples for Edge,
        otherwise triggered test inputs whose true label is not y."""
        if self.config.attack.kind is AttackKind.EDGE:
            return self.task.edge_test.X
        test = self.task.test
        keep = test.y != self.target_label
        rng = np.random.default_rng([self.config.data.seed, 0x7E57])
        return embed_trigger_batch(test.X[keep], self.config.attack.trigger, rng)

    def categories(self) -> dict[int, str]:
        """'malicious', 'I' or 'II' per client; Category I holds a larger local
        share of target-label examples than the training set as a whole."""
        y = self.target_label
        overall = float(np.mean(self.task.train.y == y))
        out = {}
        for c, d in enumerate(self.clients):
            if c in self.malicious:
                out[c] = "malicious"
            else:
                out[c] = "I" if np.mean(d.y == y) > overall else "II"
        return out


def build_scenario(config: ExperimentConfig) -> Scenario:
    task = load_task(config.data)
    parts = partition_noniid(task.train, config.partition)
    clients = [task.train.subset(p) for p in parts]
    return Scenario(config, task, parts, clients, config.model_spec)


def train(
    scn: Scenario, store: CheckpointStore | None = None, excluded: Iterable[int] = ()
) -> np.ndarray:
    """Federated training of the scenario; ``excluded`` clients take no part.

    Remaining clients are renumbered densely in id order, so an empty exclusion
    reproduces the plain run exactly.
    """
    cfg = scn.config
    excluded = set(excluded)
    keep = [c for c in range(len(scn.clients)) if c not in excluded]
    if not keep:
        raise ValueError("every client is excluded")
    new_id = {c: k for k, c in enumerate(keep)}
    malicious = frozenset(new_id[c] for c in scn.malicious if c in new_id)
    attack = cfg.attack if malicious else None
    schedule = cfg.attack.schedule if attack else None
    t = cfg.training
    plans = plan_rounds(t.rounds, len(keep), t.fraction, t.global_lr, t.seed, schedule)
    return run_training(
        init_model(scn.spec),
        plans,
        [scn.clients[c] for c in keep],
        scn.spec,
        t.params,
        t.rule,
        attack,
        malicious,
        scn.task.edge_train,
        store,
        t.checkpoint_every,
        t.seed,
    )


def pick_target(w: np.ndarray, scn: Scenario) -> int | None:
    """Index of the first target input the model assigns to y, or None."""
    X = scn.target_inputs()
    hits = np.flatnonzero(predict(X, w, scn.spec) == scn.target_label)
    return int(hits[0]) if hits.size else None


def nontarget_probe(scn: Scenario) -> ProbeInput:
    f = scn.config.forensics
    y = scn.target_label
    if f.probe_kind is ProbeKind.RANDOM_NONTARGET:
        return gen_random_nontarget(scn.spec.input_dim, y, f.probe_seed)
    test = scn.task.test
    idx = np.flatnonzero(test.y == y)
    if idx.size == 0:
        raise ValueError("no test input carries the target label")
    return ProbeInput(test.X[idx[0]], y, ProbeKind.TRUE_NONTARGET)


def detect(pairs: Sequence[InfluencePair], config: ExperimentConfig) -> DetectionReport:
    f = config.forensics
    if f.mode is Mode.SINGLE_SCORE:
        return detect_single_score(pairs, f.min_cluster_size)
    return detect_malicious(pairs, f.min_cluster_size)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcome: str
    test_accuracy: float
    asr: float
    target_index: int | None = None
    pairs: list[InfluencePair] = field(default_factory=list)
    detection: DetectionReport | None = None
    metrics: DetectionMetrics | None = None
    model: np.ndarray | None = None
    elapsed: dict[str, float] = field(default_factory=dict)

    @property
    def effective(self) -> bool:
        return self.outcome == OK


def forensics(
    scn: Scenario, w: np.ndarray, store: CheckpointStore
) -> tuple[int | None, list[InfluencePair], DetectionReport | None]:
    target_index = pick_target(w, scn)
    if target_index is None:
        return None, [], None
    y = scn.target_label
    target = ProbeInput(scn.target_inputs()[target_index], y, ProbeKind.TARGET)
    pairs = influence_pairs(store, target, nontarget_probe(scn), scn.spec, range(len(scn.clients)))
    return target_index, pairs, detect(pairs, scn.config)


def run_experiment(config: ExperimentConfig, workdir: str | os.PathLike | None = None) -> ExperimentResult:
    """Train with the configured attack, pick the first misclassified target
    input, score every client and detect the malicious ones.

    Checkpoints go to ``workdir/checkpoints.bin`` (a temporary directory when
    ``workdir`` is None). A run whose attack never produced a misclassified
    target input returns outcome :data:`NO_TARGET` instead of raising.
    """
    with tempfile.TemporaryDirectory() as tmp:
        root = workdir if workdir is not None else tmp
        path = os.path.join(root, "checkpoints.bin")
        for p in (path, path + ".idx"):
            if os.path.exists(p):
                os.remove(p)
        t0 = time.perf_counter()
        scn = build_scenario(config)
        store = CheckpointStore(path)
        w = train(scn, store)
        t1 = time.perf_counter()
        acc = accuracy(scn.task.test, w, scn.spec)
        asr = compute_asr(w, scn.target_inputs(), scn.target_label, scn.spec)
        target_index, pairs, report = forensics(scn, w, store)
        t2 = time.perf_counter()
    elapsed = {"train": t1 - t0, "forensics": t2 - t1}
    if report is None:
        log.info("seed %d: %s (ASR %.3f)", config.seed, NO_TARGET, asr)
        return ExperimentResult(config, NO_TARGET, acc, asr, model=w, elapsed=elapsed)
    metrics = compute_detection_metrics(report.predicted, scn.malicious, range(len(scn.clients)))
    return ExperimentResult(config, OK, acc, asr, target_index, pairs, report, metrics, w, elapsed)


# recovery


@dataclass(frozen=True)
class RecoveryResult:
    excluded: frozenset[int]
    accuracy_before: float
    asr_before: float
    accuracy_after: float
    asr_after: float


def recover_retrain(
    config: ExperimentConfig,
    excluded: Iterable[int],
    before: tuple[float, float] | None = None,
) -> tuple[np.ndarray, RecoveryResult]:
    """Retrain from scratch without ``excluded``.

    ``before`` is (test accuracy, ASR) of the original run; it is recomputed
    by training the full population when not given.
    """
    excluded = frozenset(int(c) for c in excluded)
    scn = build_scenario(config)
    n = len(scn.clients)
    if not excluded <= set(range(n)):
        raise ValueError("excluded clients must be valid client ids")
    if len(excluded) == n:
        raise ValueError("cannot exclude every client")
    X = scn.target_inputs()
    y = scn.target_label
    if before is None:
        w0 = train(scn)
        before = (accuracy(scn.task.test, w0, scn.spec), compute_asr(w0, X, y, scn.spec))
    w = train(scn, excluded=excluded)
    result = RecoveryResult(
        excluded,
        float(before[0]),
        float(before[1]),
        accuracy(scn.task.test, w, scn.spec),
        compute_asr(w, X, y, scn.spec),
    )
    return w, result


# probe classification


@dataclass(frozen=True)
class ProbeVerdict:
    kind: str  # "target" or "nontarget"
    index: int
    predicted: ProbeClass
    cluster_ratios: dict[int, float]

    @property
    def correct(self) -> bool:
        want = ProbeClass.TARGET if self.kind == "target" else ProbeClass.NON_TARGET
        return self.predicted is want


def misclassified_probes(scn: Scenario, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of target inputs predicted y, and of clean test inputs with a
    true label other than y that are nonetheless predicted y."""
    y = scn.target_label
    tgt = np.flatnonzero(predict(scn.target_inputs(), w, scn.spec) == y)
    test = scn.task.test
    clean = np.flatnonzero((test.y != y) & (predict(test.X, w, scn.spec) == y))
    return tgt, clean


def classify_probes(
    scn: Scenario, w: np.ndarray, store: CheckpointStore, n_target: int, n_nontarget: int
) -> list[ProbeVerdict]:
    """Classify the first ``n_target`` misclassified target inputs and the first
    ``n_nontarget`` misclassified clean inputs of one run."""
    f = scn.config.forensics
    y = scn.target_label
    tgt, clean = misclassified_probes(scn, w)
    ref = nontarget_probe(scn)
    X_t = scn.target_inputs()
    checkpoints = [store.load(r) for r in store.rounds]
    out = []
    for kind, X, idx in (("target", X_t, tgt[:n_target]), ("nontarget", scn.task.test.X, clean[:n_nontarget])):
        for i in idx:
            pairs = influence_pairs(checkpoints, ProbeInput(X[i], y), ref, scn.spec)
            report = detect_malicious(pairs, f.min_cluster_size)
            verdict = classify_ratios(report.cluster_ratios.values(), f.alpha)
            out.append(ProbeVerdict(kind, int(i), verdict, report.cluster_ratios))
    return out


# reports


def detection_records(
    pairs: Sequence[InfluencePair], det: DetectionReport | None, malicious: Iterable[int]
) -> tuple[list[dict], dict]:
    """Per-client score records and the detection part of the summary record."""
    bad = set(malicious)
    rows = [
        {
            "record": "client",
            "client": p.client,
            "s": p.s,
            "s_prime": p.s_prime,
            "rounds_counted": p.rounds_counted,
            "cluster": det.labels[p.client] if det else None,
            "predicted_malicious": p.client in det.predicted if det else False,
            "malicious": p.client in bad,
        }
        for p in pairs
    ]
    if det is None:
        return rows, {}
    m = compute_detection_metrics(det.predicted, bad & {p.client for p in pairs}, [p.client for p in pairs])
    summary = {
        "mode": det.mode.value,
        "n_clusters": det.n_clusters,
        "potential_clusters": det.potential_clusters,
        "cluster_ratios": {str(k): v for k, v in det.cluster_ratios.items()},
        "threshold": det.threshold,
        "predicted": sorted(det.predicted),
        "duplicated": det.duplicated,
        "events": det.events,
        "dacc": m.dacc,
        "fpr": m.fpr,
        "fnr": m.fnr,
        "tp": m.tp,
        "fp": m.fp,
        "tn": m.tn,
        "fn": m.fn,
    }
    return rows, summary


def summary_record(result: ExperimentResult) -> dict:
    rec = {
        "record": "summary",
        "seed": result.config.seed,
        "outcome": result.outcome,
        "attack": result.config.attack.kind.value,
        "probe_kind": result.config.forensics.probe_kind.value,
        "mode": result.config.forensics.mode.value,
        "test_accuracy": result.test_accuracy,
        "asr": result.asr,
        "target_index": result.target_index,
    }
    rec.update(detection_records(result.pairs, result.detection, result.config.malicious)[1])
    return rec


def report_records(result: ExperimentResult) -> list[dict]:
    """Config record, one record per client, then the summary record."""
    head = {"record": "config", "config": to_dict(result.config)}
    rows, _ = detection_records(result.pairs, result.detection, result.config.malicious)
    return [head, *rows, summary_record(result)]


SUMMARY_METRICS = ("test_accuracy", "asr", "dacc", "fpr", "fnr")


def summarize(results: Sequence[ExperimentResult]) -> dict:
    """Mean and population std of each metric over the effective runs."""
    eff = [r for r in results if r.effective]
    out: dict = {
        "record": "multi_seed_summary",
        "seeds": [r.config.seed for r in results],
        "effective_seeds": [r.config.seed for r in eff],
    }
    for name in SUMMARY_METRICS:
        vals = []
        for r in eff:
            vals.append(getattr(r.metrics, name) if r.metrics and hasattr(r.metrics, name) else getattr(r, name))
        out[f"{name}_mean"] = float(np.mean(vals)) if vals else None
        out[f"{name}_std"] = float(np.std(vals)) if vals else None
    return out
