"""Directional statistics of the influence scores by client category.

Trains the default scenario per seed, scores every client with the first
misclassified target input and with each non-target probe kind, and reports
how often the orderings between malicious, Category I and Category II
clients hold.

    python scripts/score_orderings.py --seeds 5
"""
import argparse
import tempfile
from pathlib import Path

import numpy as np

from flforensics import experiment as ex
from flforensics.checkpoints import CheckpointStore
from flforensics.config import default_config, load_config
from flforensics.influence import ProbeInput, ProbeKind, gen_random_nontarget, influence_pairs
from flforensics.report import table


def statistics(pairs, cats):
    s = np.array([p.s for p in pairs])
    sp = np.array([p.s_prime for p in pairs])
    M = [c for c, k in cats.items() if k == "malicious"]
    B1 = [c for c, k in cats.items() if k == "I"]
    B2 = [c for c, k in cats.items() if k == "II"]
    gap = sp - s
    pos_m = [i for i in M if s[i] > 0]
    pos_b = [j for j in B1 + B2 if s[j] > 0]
    cross = [sp[i] / s[i] <= sp[j] / s[j] for i in pos_m for j in pos_b]
    return {
        "s_mal": s[M].mean(),
        "s_I": s[B1].mean(),
        "s_II": s[B2].mean(),
        "gap_mal": gap[M].mean(),
        "gap_II": gap[B2].mean(),
        "mal_ge_II": bool(s[M].mean() >= s[B2].mean()),
        "I_ge_II": bool(s[B1].mean() >= s[B2].mean()),
        "gap_pairs": float(np.mean([gap[i] <= gap[j] for i in M for j in B2])),
        "ratio_pairs": float(np.mean(cross)) if cross else None,
    }


COLUMNS = ["seed", "probe", "s_mal", "s_I", "s_II", "gap_mal", "gap_II", "mal_ge_II", "I_ge_II", "gap_pairs", "ratio_pairs"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    args = p.parse_args(argv)
    base = load_config(args.config) if args.config else default_config(0)

    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.seed, args.seed + args.seeds):
            cfg = base.with_seed(seed)
            scn = ex.build_scenario(cfg)
            store = CheckpointStore(Path(tmp) / f"seed_{seed}.bin")
            w = ex.train(scn, store)
            idx = ex.pick_target(w, scn)
            if idx is None:
                print(f"seed {seed}: {ex.NO_TARGET}")
                continue
            y = scn.target_label
            target = ProbeInput(scn.target_inputs()[idx], y)
            clean = scn.task.test.X[np.flatnonzero(scn.task.test.y == y)[0]]
            probes = {
                "true": ProbeInput(clean, y, ProbeKind.TRUE_NONTARGET),
                "random": gen_random_nontarget(scn.spec.input_dim, y, cfg.forensics.probe_seed),
            }
            checkpoints = [store.load(r) for r in store.rounds]
            for name, probe in probes.items():
                pairs = influence_pairs(checkpoints, target, probe, scn.spec, range(len(scn.clients)))
                rows.append({"seed": seed, "probe": name, **statistics(pairs, scn.categories())})
    print(table(rows, COLUMNS), end="")


if __name__ == "__main__":
    main()
