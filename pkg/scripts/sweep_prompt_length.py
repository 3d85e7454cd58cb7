"""Accuracy versus prompt length on the synthetic task.

Trains one model per prompt length and labels the resulting accuracy
curve (monotone, flat, declining, ...).  Lengths below the per-triplet
slot cost produce prompts made entirely of null vectors, which is the
interesting left edge of the curve.
"""

import argparse
import sys

from gsap.harness import sweep, synthetic_config


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=30, help="training instances")
    ap.add_argument("--n-dev", type=int, default=60, help="dev instances")
    ap.add_argument("--max-steps", type=int, default=60)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--lengths", default="2,4,8,16,32")
    ap.add_argument("--report", default=None, help="write the JSON report here")
    args = ap.parse_args(argv)

    cfg = synthetic_config(n=args.n, n_dev=args.n_dev, epochs=2, seed=args.seed)
    cfg.train.max_steps = args.max_steps
    cfg.report_path = args.report
    lengths = [int(k) for k in args.lengths.split(",")]
    out = sweep(cfg, lengths)
    for k, acc in zip(out["prompt_lengths"], out["dev_acc"]):
        print(f"k={k:3d}  dev_acc={acc:.4f}")
    print(f"curve shape: {out['curve_shape']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
