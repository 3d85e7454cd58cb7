"""Command-line entry point.

Subcommands: run (one experiment), synth (write a synthetic task to
disk), ablate (variants x seeds), sweep (prompt-length curve), verify
(oracle battery).  `gsap run` without --config trains on a built-in
desk-scale synthetic task, which makes smoke runs one command long.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig
from .data import generate_synthetic, save_dataset
from .harness import (
    ablate,
    run_experiment,
    sweep,
    synthetic_config,
    write_paraphrases,
    write_report,
    write_triples,
)

_FLAG_OPTIONS = (
    "no_prompt",
    "random_prompt",
    "no_sapl",
    "no_prompt_entity",
    "no_prompt_relation",
    "no_paraphrase_nodes",
    "no_paraphrase_texts",
    "no_hmpr",
    "no_bigru",
    "no_relevance_score",
    "no_graph_attention",
    "no_knowledge_attention",
)


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _csv_strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--synth-n", type=int, default=120,
                   help="train size of the built-in synthetic task "
                        "(used when --config is absent)")
    p.add_argument("--synth-b", type=int, default=4)
    p.add_argument("--data-seed", type=int, default=11)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--prompt-length", type=int, default=None)
    p.add_argument("--prompt-layers", type=int, default=None)
    p.add_argument("--report", default=None, help="write report JSON here")
    p.add_argument("--dump-graph", default=None, metavar="DIR",
                   help="dump scored evidence graphs as JSON files")
    p.add_argument("--log", default=None, help="JSONL training metric log")
    p.add_argument("--verbalize-triplets", action="store_true")
    p.add_argument("--hmpr-own-gnn", action="store_true",
                   help="re-encode the refreshed graph with its own encoder")
    p.add_argument("--kg-sources", default=None,
                   help="comma subset of triples,paraphrases,corpus")
    for flag in _FLAG_OPTIONS:
        p.add_argument("--" + flag.replace("_", "-"), action="store_true")


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = synthetic_config(
            n=args.synth_n, b=args.synth_b, data_seed=args.data_seed
        )
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    if args.prompt_length is not None:
        cfg.prompt.length = args.prompt_length
    if args.prompt_layers is not None:
        cfg.prompt.layers = args.prompt_layers
    if args.report:
        cfg.report_path = args.report
    if args.dump_graph:
        cfg.dump_graph_dir = args.dump_graph
    if args.log:
        cfg.train.log_path = args.log
    if args.verbalize_triplets:
        cfg.verbalize_triplets = True
    if args.hmpr_own_gnn:
        cfg.fusion.own_gnn = True
    if args.kg_sources is not None:
        cfg.flags.kg_sources = tuple(_csv_strs(args.kg_sources))
    enabled = []
    for flag in _FLAG_OPTIONS:
        if getattr(args, flag):
            setattr(cfg.flags, flag, True)
            enabled.append(flag)
    if enabled and cfg.variant == "full":
        cfg.variant = "+".join(enabled)
    cfg.flags.validate()
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    report = run_experiment(_base_config(args))
    print(json.dumps(report, indent=1))
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    import os

    train, dev, store, para = generate_synthetic(
        seed=args.seed, n=args.n, b=args.b,
        kg_size=args.kg_size, n_dev=args.n_dev,
    )
    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, "train.jsonl"))
    save_dataset(dev, os.path.join(args.out, "dev.jsonl"))
    write_triples(store, os.path.join(args.out, "triples.tsv"))
    write_paraphrases(para, os.path.join(args.out, "paraphrases.tsv"))
    print(json.dumps({
        "out": args.out,
        "train": len(train),
        "dev": len(dev),
        "triples": len(store),
        "paraphrases": len(para),
    }, indent=1))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    out = ablate(cfg, _csv_strs(args.flags), _csv_ints(args.seeds))
    if args.report and not cfg.report_path:
        write_report(out, args.report)
    print(json.dumps(out["summary"], indent=1))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    lengths = _csv_ints(args.prompt_lengths)
    out = sweep(cfg, lengths)
    print(json.dumps(
        {
            "prompt_lengths": out["prompt_lengths"],
            "dev_acc": out["dev_acc"],
            "curve_shape": out["curve_shape"],
        },
        indent=1,
    ))
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    from .oracles import verify_all

    results = verify_all(quick=args.quick)
    failed = 0
    for r in results:
        mark = "PASS" if r["ok"] else "FAIL"
        failed += 0 if r["ok"] else 1
        print(f"{mark} {r['name']}: {r['detail']}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsap",
        description="graph-structure-aware prompting experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    _add_config_options(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_synth = sub.add_parser("synth", help="write a synthetic task to disk")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--b", type=int, default=4)
    p_synth.add_argument("--n-dev", type=int, default=None)
    p_synth.add_argument("--kg-size", type=int, default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(fn=_cmd_synth)

    p_ablate = sub.add_parser("ablate", help="run ablation variants")
    _add_config_options(p_ablate)
    p_ablate.add_argument("--flags", default="no_prompt,no_hmpr",
                          help="comma list of variant flags to toggle")
    p_ablate.add_argument("--seeds", default="0,1,2")
    p_ablate.set_defaults(fn=_cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="prompt-length accuracy curve")
    _add_config_options(p_sweep)
    p_sweep.add_argument("--prompt-lengths", default="2,4,8,16,32")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the oracle battery")
    p_verify.add_argument("--quick", action="store_true")
    p_verify.set_defaults(fn=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
