"""Multi-seed sweep over attacks and aggregation rules.

    python scripts/sweep.py --attacks Scaling ALIE Edge --seeds 5
    python scripts/sweep.py --config my.yaml --aggregation CoordinateMedian --out sweep.ndjson
"""
import argparse
import dataclasses
import sys

from flforensics.attacks import AttackKind
from flforensics.config import default_config, load_config
from flforensics.experiment import run_experiment, summarize, summary_record
from flforensics.fl import AggKind
from flforensics.report import table, write_ndjson

COLUMNS = ["attack", "seed", "outcome", "test_accuracy", "asr", "dacc", "fpr", "fnr", "n_clusters"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--attacks", nargs="+", default=["Scaling"], choices=[k.value for k in AttackKind])
    p.add_argument("--aggregation", choices=[k.value for k in AggKind])
    p.add_argument("--trim", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", help="also write every summary record to this NDJSON file")
    args = p.parse_args(argv)

    base = load_config(args.config) if args.config else default_config(0)
    if args.aggregation:
        trim = args.trim if args.aggregation == AggKind.TRIM.value else 0
        base = dataclasses.replace(base, training=dataclasses.replace(base.training, aggregation=args.aggregation, trim=trim))

    rows, records = [], []
    for kind in args.attacks:
        results = []
        for seed in range(args.seed, args.seed + args.seeds):
            cfg = base.with_seed(seed)
            cfg = dataclasses.replace(cfg, attack=dataclasses.replace(cfg.attack, kind=kind))
            res = run_experiment(cfg)
            results.append(res)
            rec = summary_record(res)
            records.append(rec)
            rows.append(rec)
            print(f"{kind} seed {seed}: {res.outcome}, ASR {res.asr:.3f}"
                  + (f", DACC {res.metrics.dacc:.3f}" if res.metrics else ""), file=sys.stderr)
        agg = summarize(results)
        records.append({**agg, "attack": kind})
        rows.append({"attack": kind, "seed": "mean", "outcome": f"{len(agg['effective_seeds'])} effective",
                     **{m: agg[f"{m}_mean"] for m in ("test_accuracy", "asr", "dacc", "fpr", "fnr")}})
    print(table(rows, COLUMNS), end="")
    if args.out:
        write_ndjson(args.out, records)


if __name__ == "__main__":
    main()
