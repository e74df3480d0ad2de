"""Desk-scale keyword spotting run: synthesize data, train one matcher
per front-end, and print an AUC/EER comparison table.

Artifacts land in the output directory: datasets under train/ and
eval/, plus one checkpoint, history CSV, and scores CSV per front-end.
"""

import argparse
import os
import sys
import time

from sdckws.data import load_manifest, synth_dataset
from sdckws.features import FEATURE_NAMES, SdcConfig
from sdckws.metrics import auc, eer, f1_at, write_scores
from sdckws.model import ModelConfig, evaluate, history_csv, save_checkpoint, train


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-o", "--output-dir", default="desk_run")
    parser.add_argument("--keywords", nargs="+",
                        default=["able", "ocean", "tiger", "winter"])
    parser.add_argument("--per-keyword", type=int, default=25)
    parser.add_argument("--eval-per-keyword", type=int, default=13)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--data-seed", type=int, default=11)
    parser.add_argument("--sdc", type=SdcConfig.parse, default=SdcConfig(),
                        metavar="N-d-p-k")
    parser.add_argument("--features", nargs="+", default=["sdc", "mel"],
                        choices=sorted(FEATURE_NAMES))
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
    print(f"train {len(train_manifest)} examples,"
          f" eval {len(eval_manifest)} examples")

    results = []
    for name in args.features:
        cfg = ModelConfig(feature=FEATURE_NAMES[name], sdc=args.sdc,
                          lr=args.lr, batch_size=args.batch_size,
                          seed=args.seed)
        start = time.monotonic()
        model, ckpt, history = train(
            train_manifest, cfg, args.epochs,
            log=lambda s: print(
                f"  [{name}] epoch {s.epoch} train_loss={s.train_loss:.4f}"
                f" val_auc={s.val_auc:.4f}", flush=True))
        scored = evaluate(model, eval_manifest)
        elapsed = time.monotonic() - start
        stem = os.path.join(args.output_dir, name.replace("-", "_"))
        save_checkpoint(f"{stem}.kwsm", ckpt)
        with open(f"{stem}_history.csv", "w", encoding="utf-8") as handle:
            handle.write(history_csv(history))
        write_scores(f"{stem}_scores.csv", scored)
        results.append((name, auc(scored), eer(scored),
                        f1_at(scored, 0.5), elapsed))

    print(f"\n{'front-end':<12} {'auc':>8} {'eer':>8} {'f1@0.5':>8} {'sec':>6}")
    for name, a, e, f1, elapsed in results:
        print(f"{name:<12} {a:>8.4f} {e:>8.4f} {f1:>8.4f} {elapsed:>6.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
