"""Paired toy-training runs of every head topology over several seeds.

Each seed builds one noisy dataset with truth-aligned superpixels and trains
the pixel baseline, V1, V2 and V3 heads from the same initial pixel branch.

    python3 scripts/run_toy_training.py --seeds 20 --noise 1.5
"""

import argparse
import csv
import sys

import numpy as np

from spxpool import metrics, netgraph

KINDS = ("pixel", "v1", "v2", "v3")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--noise", type=float, default=1.5)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--lr", type=float, default=2.0)
    ap.add_argument("--mode", choices=("max", "avg"), default="max")
    args = ap.parse_args()

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["seed", *KINDS, "oracle"])
    finals = {k: [] for k in KINDS}
    for seed in range(args.seeds):
        data = netgraph.make_toy_dataset(args.images, seed=seed, noise=args.noise)
        C = data[0][0].channels
        row = []
        for kind in KINDS:
            head = netgraph.SegHead.init(kind, C, 2, args.mode, seed=seed)
            acc = netgraph.train_toy(head, data, args.steps, args.lr).final_accuracy
            finals[kind].append(acc)
            row.append(f"{acc:.4f}")
        truth = np.concatenate([t for _, _, t in data])
        oracle = metrics.pixel_accuracy(
            np.concatenate([metrics.oracle_labels(s, t) for _, s, t in data]), truth)
        out.writerow([seed, *row, f"{oracle:.4f}"])
    wins = sum(v3 >= px for v3, px in zip(finals["v3"], finals["pixel"]))
    print("# mean accuracy: " + ", ".join(f"{k}={np.mean(v):.3f}" for k, v in finals.items()),
          file=sys.stderr)
    print(f"# V3 >= pixel baseline in {wins}/{args.seeds} seeds", file=sys.stderr)


if __name__ == "__main__":
    main()
