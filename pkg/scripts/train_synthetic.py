"""Train the full model on the synthetic reachability task.

The default scale (500 train / 200 dev, 4 choices, 400 steps) reaches
about 0.95 dev accuracy in roughly two minutes on a laptop CPU.
"""

import argparse
import json
import sys

from gsap.harness import run_experiment, synthetic_config


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=500, help="training instances")
    ap.add_argument("--n-dev", type=int, default=200, help="dev instances")
    ap.add_argument("--b", type=int, default=4, help="choices per question")
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--max-steps", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--report", default=None, help="write the JSON report here")
    ap.add_argument(
        "--dump-graphs", default=None, metavar="DIR",
        help="dump scored evidence graphs for the dev set",
    )
    args = ap.parse_args(argv)

    cfg = synthetic_config(
        n=args.n, n_dev=args.n_dev, b=args.b, epochs=args.epochs,
        seed=args.seed,
    )
    cfg.train.max_steps = args.max_steps
    cfg.report_path = args.report
    cfg.dump_graph_dir = args.dump_graphs
    report = run_experiment(cfg)
    print(json.dumps(report, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
