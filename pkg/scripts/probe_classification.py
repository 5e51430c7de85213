"""Target vs non-target classification of misclassified inputs, per seed.

For every seed: train the default scenario, take the first N triggered inputs
and the first N clean inputs that the model assigns to the target label, and
classify each with the alpha ratio rule.

    python scripts/probe_classification.py --seeds 5 --probes 4
"""
import argparse
import tempfile
from pathlib import Path

import numpy as np

from flforensics import experiment as ex
from flforensics.checkpoints import CheckpointStore
from flforensics.config import default_config, load_config
from flforensics.report import table


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--probes", type=int, default=4, help="probes of each kind per seed")
    p.add_argument("--verbose", action="store_true", help="print cluster ratios of every probe")
    args = p.parse_args(argv)
    base = load_config(args.config) if args.config else default_config(0)

    rows, all_verdicts = [], []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.seed, args.seed + args.seeds):
            scn = ex.build_scenario(base.with_seed(seed))
            store = CheckpointStore(Path(tmp) / f"seed_{seed}.bin")
            w = ex.train(scn, store)
            verdicts = ex.classify_probes(scn, w, store, args.probes, args.probes)
            all_verdicts += verdicts
            row = {"seed": seed}
            for kind in ("target", "nontarget"):
                v = [x for x in verdicts if x.kind == kind]
                row[f"n_{kind}"] = len(v)
                row[f"acc_{kind}"] = float(np.mean([x.correct for x in v])) if v else None
            rows.append(row)
            if args.verbose:
                for v in verdicts:
                    ratios = ", ".join(f"{k}: {r:.3g}" for k, r in v.cluster_ratios.items())
                    print(f"seed {seed} {v.kind} #{v.index}: {v.predicted.value} [{ratios}]")
    total = {"seed": "all"}
    for kind in ("target", "nontarget"):
        v = [x for x in all_verdicts if x.kind == kind]
        total[f"n_{kind}"] = len(v)
        total[f"acc_{kind}"] = float(np.mean([x.correct for x in v])) if v else None
    print(table(rows + [total], ["seed", "n_target", "acc_target", "n_nontarget", "acc_nontarget"]), end="")


if __name__ == "__main__":
    main()
