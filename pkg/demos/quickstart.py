"""End-to-end walkthrough: raw interactions to a metric comparison.

Builds a synthetic corpus with planted taste clusters, splits it with the
command-line pipeline, trains the full model and a plain graph-propagation
baseline, and prints test metrics side by side. The full model should beat
the baseline by roughly +0.03 Recall@20 on this data. About two minutes on
one core.

    python3 demos/quickstart.py [--workdir DIR]
"""

import argparse
import os
import tempfile

from scone.cli import main
from scone.synthetic import planted_interactions, write_interactions

DEMO_CONFIG = """\
max_epochs = 6
patience = 10
lambda1 = 1e-5
w = 0.8
sampling_steps = 5
"""


def read_metrics(path):
    rows = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            metric, group, value = line.rstrip("\n").split(",")
            rows[(metric, group)] = float(value)
    return rows


def run(workdir, seed):
    data_dir = os.path.join(workdir, "data")
    raw = os.path.join(workdir, "raw.tsv")
    config = os.path.join(workdir, "config.txt")

    print("== generating synthetic corpus ==")
    write_interactions(planted_interactions(seed=seed), raw)
    with open(config, "w", encoding="utf-8") as fh:
        fh.write(DEMO_CONFIG)

    print("\n== prepare ==")
    main(["prepare", "--input", raw, "--out", data_dir, "--seed", str(seed)])

    results = {}
    for label, ablation in (("baseline", "lightgcn"), ("full", "none")):
        out = os.path.join(workdir, label)
        print(f"\n== train {label} ({ablation}) ==")
        main(["train", "--data", data_dir, "--config", config,
              "--ablation", ablation, "--seed", str(seed), "--out", out])
        metrics = os.path.join(out, "metrics.csv")
        main(["eval", "--data", data_dir,
              "--checkpoint", os.path.join(out, "best_theta.ckpt"),
              "--k", "20", "--uniformity", "--out", metrics])
        results[label] = read_metrics(metrics)

    print("\n== test metrics (k=20) ==")
    header = f"{'metric':<22}{'baseline':>12}{'full':>12}{'delta':>12}"
    print(header)
    print("-" * len(header))
    for metric in (("recall@20", "all"), ("ndcg@20", "all"),
                   ("uniformity", "users")):
        b = results["baseline"][metric]
        f = results["full"][metric]
        name = f"{metric[0]} ({metric[1]})"
        print(f"{name:<22}{b:>12.4f}{f:>12.4f}{f - b:>+12.4f}")
    print(f"\nartifacts kept under {workdir}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default=None,
                    help="where to put data and runs (default: a temp dir)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    workdir = args.workdir or tempfile.mkdtemp(prefix="scone-demo-")
    os.makedirs(workdir, exist_ok=True)
    run(workdir, args.seed)
