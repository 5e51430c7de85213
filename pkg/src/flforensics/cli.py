"""Command-line entry point.

Every subcommand reads and writes files in ``--out``:

    config.yaml                  resolved configuration (written by every stage)
    data/*.txt                   datasets in the text format      (partition)
    partition.ndjson             one record per client            (partition)
    checkpoints.bin[.idx]        checkpoint store                 (train)
    model.npy, train.json        final model, accuracy and ASR    (train)
    scores.ndjson, scores.npz    influence scores                 (forensics)
    probes.json                  the two probes used              (forensics)
    detection.ndjson             clusters and predicted clients   (detect)
    classification.json          target / non-target verdict      (classify-probe)
    recovery.json                before/after retraining          (recover)
    report.ndjson, report.txt    combined report                  (report)

``run-all --seeds k`` runs seeds seed..seed+k-1 into ``seed_<s>/`` and writes
``summary.ndjson`` and ``summary.txt`` on top.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiment as ex
from .checkpoints import CheckpointStore
from .config import ConfigError, ExperimentConfig, default_config, load_config, save_config, to_dict
from .data import read_dataset, write_dataset
from .detect import classify_probe, detect_malicious
from .influence import InfluencePair, ProbeInput, ProbeKind, influence_pairs
from .model import accuracy
from .report import encode_record, fmt_num, read_ndjson, table, write_ndjson

log = logging.getLogger("flforensics")


class StageError(RuntimeError):
    pass


# helpers


def _resolve_config(args) -> ExperimentConfig:
    out = Path(args.out)
    if args.config:
        cfg = load_config(args.config)
    elif (out / "config.yaml").exists():
        cfg = load_config(out / "config.yaml")
    else:
        cfg = default_config(0)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"{path} not found; run `{stage}` first")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(encode_record(obj) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


def _fresh_store(out: Path) -> CheckpointStore:
    path = out / "checkpoints.bin"
    for p in (path, path.with_name(path.name + ".idx")):
        if p.exists():
            p.unlink()
    return CheckpointStore(path)


# stages


def stage_partition(cfg: ExperimentConfig, out: Path) -> None:
    scn = ex.build_scenario(cfg)
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    C = cfg.data.num_classes
    for name in ("train", "test", "edge_train", "edge_test"):
        write_dataset(data_dir / f"{name}.txt", getattr(scn.task, name), C)
    cats = scn.categories()
    y = cfg.attack.target_label
    rows = []
    for c, (idx, d) in enumerate(zip(scn.parts, scn.clients)):
        rows.append(
            {
                "record": "client",
                "client": c,
                "n_examples": len(d),
                "n_target_label": int(np.sum(d.y == y)),
                "category": cats[c],
                "indices": idx.tolist(),
            }
        )
    write_ndjson(out / "partition.ndjson", rows)
    counts = {k: sum(v == k for v in cats.values()) for k in ("malicious", "I", "II")}
    sizes = [r["n_examples"] for r in rows]
    print(
        f"{len(rows)} clients, {len(scn.task.train)} training examples "
        f"(per client min {min(sizes)}, max {max(sizes)}); "
        f"malicious {counts['malicious']}, Category I {counts['I']}, Category II {counts['II']}"
    )


def stage_train(cfg: ExperimentConfig, out: Path) -> dict:
    scn = ex.build_scenario(cfg)
    store = _fresh_store(out)
    t0 = time.perf_counter()
    w = ex.train(scn, store)
    secs = time.perf_counter() - t0
    np.save(out / "model.npy", w)
    info = {
        "test_accuracy": accuracy(scn.task.test, w, scn.spec),
        "asr": ex.compute_asr(w, scn.target_inputs(), scn.target_label, scn.spec),
        "malicious": sorted(scn.malicious),
        "checkpoint_rounds": store.rounds,
    }
    _write_json(out / "train.json", info)
    print(
        f"trained {cfg.training.rounds} rounds in {secs:.1f}s; test accuracy {fmt_num(info['test_accuracy'])}, "
        f"ASR {fmt_num(info['asr'])}; {len(store)} checkpoints"
    )
    return info


def _save_scores(out: Path, pairs: list[InfluencePair]) -> None:
    np.savez(
        out / "scores.npz",
        client=np.array([p.client for p in pairs], dtype=np.int64),
        s=np.array([p.s for p in pairs]),
        s_prime=np.array([p.s_prime for p in pairs]),
        rounds_counted=np.array([p.rounds_counted for p in pairs], dtype=np.int64),
    )
    write_ndjson(
        out / "scores.ndjson",
        [
            {"record": "client", "client": p.client, "s": p.s, "s_prime": p.s_prime, "rounds_counted": p.rounds_counted}
            for p in pairs
        ],
    )


def _load_scores(out: Path) -> list[InfluencePair]:
    z = np.load(_need(out / "scores.npz", "forensics"))
    if z["client"].size == 0:
        raise StageError(f"forensics found {ex.NO_TARGET}; nothing to detect")
    return [
        InfluencePair(int(c), float(s), float(sp), int(r))
        for c, s, sp, r in zip(z["client"], z["s"], z["s_prime"], z["rounds_counted"])
    ]


def stage_forensics(cfg: ExperimentConfig, out: Path) -> list[InfluencePair]:
    scn = ex.build_scenario(cfg)
    w = np.load(_need(out / "model.npy", "train"))
    store = CheckpointStore(_need(out / "checkpoints.bin", "train"))
    target_index, pairs, _ = ex.forensics(scn, w, store)
    _save_scores(out, pairs)
    if target_index is None:
        _write_json(out / "probes.json", {"outcome": ex.NO_TARGET})
        print(f"outcome: {ex.NO_TARGET}")
        return []
    ref = ex.nontarget_probe(scn)
    _write_json(
        out / "probes.json",
        {
            "outcome": ex.OK,
            "label": scn.target_label,
            "target_index": target_index,
            "target": scn.target_inputs()[target_index].tolist(),
            "nontarget_kind": ref.kind.value,
            "nontarget": np.asarray(ref.input).tolist(),
        },
    )
    print(f"scored {len(pairs)} clients against target input #{target_index} and a {ref.kind.value} probe")
    return pairs


def stage_detect(cfg: ExperimentConfig, out: Path) -> dict:
    pairs = _load_scores(out)
    report = ex.detect(pairs, cfg)
    rows, extra = ex.detection_records(pairs, report, cfg.malicious)
    summary = {"record": "summary", **extra}
    write_ndjson(out / "detection.ndjson", rows + [summary])
    for e in report.events:
        log.warning("%s", e)
    print(
        f"{report.n_clusters} clusters, threshold {fmt_num(report.threshold) if report.threshold is not None else 'undefined'}; "
        f"flagged {len(report.predicted)} clients; DACC {fmt_num(summary['dacc'])} "
        f"FPR {fmt_num(summary['fpr'])} FNR {fmt_num(summary['fnr'])}"
    )
    return summary


def stage_classify(cfg: ExperimentConfig, out: Path, probe_path: str | None) -> str:
    f = cfg.forensics
    if probe_path is None:
        pairs = _load_scores(out)
        source = "forensics target input"
    else:
        data, _ = read_dataset(probe_path)
        if len(data) == 0:
            raise StageError(f"{probe_path} holds no examples")
        scn = ex.build_scenario(cfg)
        store = CheckpointStore(_need(out / "checkpoints.bin", "train"))
        probe = ProbeInput(data.X[0], scn.target_label, ProbeKind.TARGET)
        pairs = influence_pairs(store, probe, ex.nontarget_probe(scn), scn.spec, range(len(scn.clients)))
        source = f"first row of {probe_path}"
    verdict = classify_probe(pairs, f.min_cluster_size, f.alpha)
    report = detect_malicious(pairs, f.min_cluster_size)
    _write_json(
        out / "classification.json",
        {
            "probe": source,
            "alpha": f.alpha,
            "cluster_ratios": {str(k): v for k, v in report.cluster_ratios.items()},
            "verdict": verdict.value,
        },
    )
    print(f"{source}: {verdict.value} (alpha {fmt_num(f.alpha)})")
    return verdict.value


def stage_recover(cfg: ExperimentConfig, out: Path, exclude: list[int] | None) -> dict:
    if exclude is None:
        det = read_ndjson(_need(out / "detection.ndjson", "detect"))
        exclude = det[-1]["predicted"]
    before = None
    if (out / "train.json").exists():
        t = _read_json(out / "train.json")
        before = (t["test_accuracy"], t["asr"])
    _, r = ex.recover_retrain(cfg, exclude, before)
    rec = {
        "excluded": sorted(r.excluded),
        "accuracy_before": r.accuracy_before,
        "asr_before": r.asr_before,
        "accuracy_after": r.accuracy_after,
        "asr_after": r.asr_after,
    }
    _write_json(out / "recovery.json", rec)
    print(
        f"excluded {len(r.excluded)} clients: accuracy {fmt_num(r.accuracy_before)} -> {fmt_num(r.accuracy_after)}, "
        f"ASR {fmt_num(r.asr_before)} -> {fmt_num(r.asr_after)}"
    )
    return rec


REPORT_COLUMNS = ["client", "s", "s_prime", "rounds_counted", "cluster", "predicted_malicious", "malicious"]
SUMMARY_COLUMNS = ["seed", "outcome", "test_accuracy", "asr", "dacc", "fpr", "fnr", "threshold", "n_clusters"]


def stage_report(cfg: ExperimentConfig, out: Path) -> dict:
    train = _read_json(_need(out / "train.json", "train"))
    probes = _read_json(_need(out / "probes.json", "forensics"))
    summary = {
        "record": "summary",
        "seed": cfg.seed,
        "outcome": probes["outcome"],
        "attack": cfg.attack.kind.value,
        "probe_kind": cfg.forensics.probe_kind.value,
        "mode": cfg.forensics.mode.value,
        "test_accuracy": train["test_accuracy"],
        "asr": train["asr"],
        "target_index": probes.get("target_index"),
    }
    clients = []
    if probes["outcome"] == ex.OK:
        det = read_ndjson(_need(out / "detection.ndjson", "detect"))
        clients = [r for r in det if r["record"] == "client"]
        extra = {k: v for k, v in det[-1].items() if k != "record"}
        summary.update(extra)
    if (out / "recovery.json").exists():
        summary["recovery"] = _read_json(out / "recovery.json")
    write_ndjson(out / "report.ndjson", [{"record": "config", "config": to_dict(cfg)}, *clients, summary])
    text = table(clients, REPORT_COLUMNS) if clients else ""
    text += "\n" + table([summary], SUMMARY_COLUMNS)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return summary


def run_all(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    stage_partition(cfg, out)
    stage_train(cfg, out)
    pairs = stage_forensics(cfg, out)
    if pairs:
        stage_detect(cfg, out)
        stage_recover(cfg, out, None)
    for p in ("detection.ndjson", "recovery.json"):
        if not pairs and (out / p).exists():
            (out / p).unlink()
    return stage_report(cfg, out)


def run_seeds(cfg: ExperimentConfig, out: Path, k: int) -> list[dict]:
    summaries = []
    for s in range(cfg.seed, cfg.seed + k):
        print(f"== seed {s}")
        summaries.append(run_all(cfg.with_seed(s), out / f"seed_{s}"))
    agg = multi_seed_summary(summaries)
    write_ndjson(out / "summary.ndjson", summaries + [agg])
    text = table(summaries, SUMMARY_COLUMNS) + "\n" + table([agg], list(agg)[1:])
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return summaries


def multi_seed_summary(summaries: list[dict]) -> dict:
    eff = [s for s in summaries if s["outcome"] == ex.OK]
    out = {"record": "multi_seed_summary", "runs": len(summaries), "effective": len(eff)}
    for name in ex.SUMMARY_METRICS:
        vals = [s[name] for s in eff if s.get(name) is not None]
        out[f"{name}_mean"] = float(np.mean(vals)) if vals else None
        out[f"{name}_std"] = float(np.std(vals)) if vals else None
    return out


# argument parsing


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config; defaults to <out>/config.yaml, then built-in defaults")
    common.add_argument("--seed", type=_u64, help="master seed; derives every component seed")
    common.add_argument("--out", default="runs/default", help="artifact directory (default: %(default)s)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="flforensics", description="Poisoned federated training and forensics.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("partition", parents=[common], help="generate data and the non-iid client split")
    sub.add_parser("train", parents=[common], help="federated training with checkpoints")
    sub.add_parser("forensics", parents=[common], help="influence scores for every client")
    sub.add_parser("detect", parents=[common], help="cluster scores and flag malicious clients")
    p = sub.add_parser("classify-probe", parents=[common], help="decide whether a misclassified input is a target input")
    p.add_argument("--probe", help="dataset file whose first row is the input to classify")
    p = sub.add_parser("recover", parents=[common], help="retrain without the flagged clients")
    p.add_argument("--exclude", type=int, nargs="*", help="client ids to drop instead of the detected set")
    sub.add_parser("report", parents=[common], help="write report.ndjson and report.txt")
    p = sub.add_parser("run-all", parents=[common], help="every stage in order")
    p.add_argument("--seeds", type=int, default=1, help="run this many consecutive seeds and summarize")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = _resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command != "run-all":
            save_config(cfg, out / "config.yaml")
        if args.command == "partition":
            stage_partition(cfg, out)
        elif args.command == "train":
            stage_train(cfg, out)
        elif args.command == "forensics":
            stage_forensics(cfg, out)
        elif args.command == "detect":
            stage_detect(cfg, out)
        elif args.command == "classify-probe":
            stage_classify(cfg, out, args.probe)
        elif args.command == "recover":
            stage_recover(cfg, out, args.exclude)
        elif args.command == "report":
            stage_report(cfg, out)
        elif args.command == "run-all":
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1")
            if args.seeds == 1:
                run_all(cfg, out)
            else:
                run_seeds(cfg, out, args.seeds)
    except (ConfigError, StageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
