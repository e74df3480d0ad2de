"""Sweep the shifted-delta shift d and block count k one at a time and
write one grid CSV per sweep.

Each grid cell trains its own matcher from a cell-specific seed, so
rows are independent and the whole sweep is reproducible.
"""

import argparse
import os
import sys

from sdckws.data import load_manifest, synth_dataset
from sdckws.metrics import ablation_csv, ablation_grid
from sdckws.model import ModelConfig


def parse_range(text):
    low, high = text.split("..", 1)
    return list(range(int(low), int(high) + 1))


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-o", "--output-dir", default="ablation_run")
    parser.add_argument("--keywords", nargs="+",
                        default=["able", "ocean", "tiger", "winter"])
    parser.add_argument("--per-keyword", type=int, default=25)
    parser.add_argument("--eval-per-keyword", type=int, default=13)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--d-range", type=parse_range, default=[1, 2, 3, 4],
                        metavar="LO..HI")
    parser.add_argument("--k-range", type=parse_range,
                        default=[5, 6, 7, 8, 9, 10], metavar="LO..HI")
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--data-seed", type=int, default=11)
    return parser.parse_args()


def main():
    args = parse_args()
    os.makedirs(args.output_dir, exist_ok=True)
    train_manifest = load_manifest(synth_dataset(
        args.keywords, args.per_keyword, 1.0, args.data_seed,
        os.path.join(args.output_dir, "train")))
    eval_manifest = load_manifest(synth_dataset(
        args.keywords, args.eval_per_keyword, 1.0, args.data_seed + 1,
        os.path.join(args.output_dir, "eval")))
    cfg = ModelConfig(lr=args.lr, batch_size=args.batch_size, seed=args.seed)

    def log_row(row):
        print(f"  d={row.d} k={row.k} auc={row.auc:.4f} eer={row.eer:.4f}",
              flush=True)

    for variable, values in (("d", args.d_range), ("k", args.k_range)):
        if not values:
            continue
        print(f"sweeping {variable} over {values}")
        rows = ablation_grid(
            train_manifest, eval_manifest,
            d_values=values if variable == "d" else [],
            k_values=values if variable == "k" else [],
            base_cfg=cfg, epochs=args.epochs, log=log_row)
        path = os.path.join(args.output_dir, f"grid_{variable}.csv")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(ablation_csv(rows))
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
