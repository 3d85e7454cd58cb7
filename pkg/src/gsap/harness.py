"""Experiment orchestration: bundles, runs, ablations, sweeps, reports.

A TaskBundle is everything one experiment consumes: datasets, knowledge
sources and the tokenizer built over all of their text.  run_experiment
executes build -> train -> evaluate for one flag set and returns a report
dict {variant, dev_acc, test_acc, steps, wall_time_s, ...}; ablate and
sweep wrap it over variants x seeds and prompt lengths.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass

from .config import (
    EncoderConfig,
    ExperimentConfig,
    FusionConfig,
    GraphConfig,
    PromptConfig,
    TrainConfig,
)
from .data import QAInstance, generate_synthetic, load_dataset
from .encoder import WordTokenizer
from .knowledge import (
    EvidenceCorpus,
    ParaphraseDict,
    TripleStore,
    load_corpus,
    load_paraphrases,
    load_triples,
)
from .model import GSAPModel
from .trainer import evaluate, freeze_check, seed_all, train

log = logging.getLogger(__name__)

GRAPH_DUMP_LIMIT = 25


def synthetic_config(
    n: int,
    seed: int = 0,
    n_dev: int | None = None,
    b: int = 4,
    epochs: int = 6,
    data_seed: int = 11,
) -> ExperimentConfig:
    """Desk-scale operating point for the synthetic benchmark.

    Dimensions and learning rates are sized for fast CPU convergence;
    the data seed is independent of the training seed so seed-averaged
    comparisons share one dataset.
    """
    return ExperimentConfig(
        synthetic={"seed": data_seed, "n": n, "b": b, "n_dev": n_dev},
        encoder=EncoderConfig(
            hidden_size=64, num_layers=2, num_heads=2, ff_size=128,
            max_len=128, init_seed=1,
        ),
        graph=GraphConfig(
            dim=28, num_layers=2, node_type_dim=8, rel_type_dim=8,
            relevance_dim=4, prune_threshold=0.0, max_paths=200,
            top_k_evidence=25,
        ),
        prompt=PromptConfig(length=4, hidden_size=32),
        fusion=FusionConfig(dim=24),
        train=TrainConfig(
            lr_text=1e-3, lr_graph=3e-3, epochs=epochs,
            warmup_steps=50, seed=seed,
        ),
    )


@dataclass
class TaskBundle:
    train: list[QAInstance]
    dev: list[QAInstance]
    test: list[QAInstance] | None
    store: TripleStore
    para: ParaphraseDict
    corpus: EvidenceCorpus
    tokenizer: WordTokenizer


def build_vocab(
    datasets: list[list[QAInstance]],
    store: TripleStore,
    para: ParaphraseDict,
    corpus: EvidenceCorpus,
) -> WordTokenizer:
    """Tokenizer over every text the pipeline may assemble: questions,
    choices, paraphrase definitions, corpus sentences and the store's
    surfaces and relation labels (triples can be verbalized)."""
    texts: list[str] = []
    for ds in datasets:
        for inst in ds:
            texts.append(inst.question)
            texts.extend(inst.choices)
    texts.extend(para.entries.values())
    texts.extend(corpus.sentences)
    texts.extend(store.entity_index)
    texts.extend(store.relation_vocab)
    return WordTokenizer.from_texts(texts)


def _merged_triples(path_field: str) -> TripleStore:
    """One store from a comma-separated path list; duplicates collapse."""
    merged = TripleStore()
    for path in path_field.split(","):
        part = load_triples(path.strip())
        for t in part.triples:
            merged.add(t.head, t.relation, t.tail)
    return merged


def load_bundle(cfg: ExperimentConfig) -> TaskBundle:
    if cfg.synthetic is not None:
        syn = dict(cfg.synthetic)
        train_set, dev_set, store, para = generate_synthetic(
            seed=int(syn.get("seed", 0)),
            n=int(syn.get("n", 100)),
            b=int(syn.get("b", 4)),
            kg_size=syn.get("kg_size"),
            n_dev=syn.get("n_dev"),
        )
        test_set = None
        # evidence sentences verbalize the store; retrieval is keyed on the
        # question alone, so the segment is identical across choices
        if syn.get("corpus", True):
            corpus = EvidenceCorpus(
                [f"{t.head} {t.relation} {t.tail}" for t in store.triples]
            )
        else:
            corpus = EvidenceCorpus()
    else:
        store = (
            _merged_triples(cfg.triples_path)
            if cfg.triples_path
            else TripleStore()
        )
        para = (
            load_paraphrases(cfg.paraphrases_path)
            if cfg.paraphrases_path
            else ParaphraseDict()
        )
        corpus = (
            load_corpus(cfg.corpus_path) if cfg.corpus_path else EvidenceCorpus()
        )
        train_set = load_dataset(cfg.train_path)
        dev_set = load_dataset(cfg.dev_path)
        test_set = load_dataset(cfg.test_path) if cfg.test_path else None

    if cfg.vocab_path and os.path.exists(cfg.vocab_path):
        tokenizer = WordTokenizer.load(cfg.vocab_path)
    else:
        tokenizer = build_vocab(
            [train_set, dev_set, test_set or []], store, para, corpus
        )
        if cfg.vocab_path:
            tokenizer.save(cfg.vocab_path)
    return TaskBundle(train_set, dev_set, test_set, store, para, corpus, tokenizer)


def build_model(cfg: ExperimentConfig, bundle: TaskBundle) -> GSAPModel:
    return GSAPModel(
        cfg, bundle.store, bundle.para, bundle.corpus, bundle.tokenizer
    )


def clone_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig.from_dict(cfg.to_dict())


def apply_variant(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    """A copy of cfg with the named flags enabled; 'full' turns none on.
    Compound variants join flag names with '+'."""
    out = clone_config(cfg)
    out.variant = name
    if name == "full":
        return out
    flag_fields = {f.name for f in dataclasses.fields(out.flags)}
    for part in name.split("+"):
        if part not in flag_fields or part == "kg_sources":
            raise ValueError(f"unknown ablation flag {part!r}")
        setattr(out.flags, part, True)
    out.flags.validate()
    return out


def dump_graphs(
    model: GSAPModel, instances: list[QAInstance], out_dir: str
) -> int:
    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for inst in instances[:GRAPH_DUMP_LIMIT]:
        for ci in range(len(inst.choices)):
            graph = model.scored_graph(inst, ci)
            path = os.path.join(out_dir, f"{inst.id}-c{ci}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(graph.to_json_dict(), fh, indent=1)
            count += 1
    return count


def run_experiment(
    cfg: ExperimentConfig, bundle: TaskBundle | None = None
) -> dict:
    """Build, train and evaluate one configuration; returns the report."""
    cfg.validate()
    log.info("run variant=%s seed=%d flags=%s",
             cfg.variant, cfg.train.seed, cfg.flags.enabled() or "none")
    if bundle is None:
        bundle = load_bundle(cfg)
    seed_all(cfg.train.seed)
    model = build_model(cfg, bundle)
    result = train(model, bundle.train, bundle.dev, cfg.train)
    test_acc = (
        evaluate(model, bundle.test) if bundle.test else None
    )
    report = {
        "variant": cfg.variant,
        "dev_acc": result.best_dev_acc,
        "test_acc": test_acc,
        "steps": result.steps,
        "wall_time_s": round(result.wall_time_s, 3),
        "seed": cfg.train.seed,
        "prompt_length": model.prompt_len,
        "frozen_encoder_unchanged": freeze_check(model),
        "flags": cfg.flags.enabled(),
    }
    if cfg.dump_graph_dir:
        n = dump_graphs(model, bundle.dev, cfg.dump_graph_dir)
        report["graphs_dumped"] = n
    if cfg.report_path:
        write_report(report, cfg.report_path)
    return report


def write_report(report: dict, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)


def ablate(
    cfg: ExperimentConfig,
    variants: list[str],
    seeds: list[int],
) -> dict:
    """Run each variant over the seed list; 'full' is prepended when
    missing so every report has a baseline to compare against."""
    names = list(variants)
    if "full" not in names:
        names.insert(0, "full")
    reports: list[dict] = []
    means: dict[str, float] = {}
    base_bundle = load_bundle(cfg)
    for name in names:
        accs = []
        for seed in seeds:
            vcfg = apply_variant(cfg, name)
            vcfg.train.seed = seed
            vcfg.report_path = None
            vcfg.dump_graph_dir = None
            rep = run_experiment(vcfg, bundle=base_bundle)
            reports.append(rep)
            accs.append(rep["dev_acc"])
        means[name] = sum(accs) / len(accs)
    summary = {
        name: {
            "mean_dev_acc": round(means[name], 4),
            "delta_vs_full": round(means[name] - means["full"], 4),
        }
        for name in names
    }
    out = {"reports": reports, "summary": summary, "seeds": seeds}
    if cfg.report_path:
        write_report(out, cfg.report_path)
    return out


def curve_shape(values: list[float], tol: float = 0.01) -> str:
    """Coarse label for an accuracy-vs-length curve: rising prefix, then
    what the tail does."""
    marks = []
    for a, b in zip(values, values[1:]):
        d = b - a
        marks.append("up" if d > tol else "down" if d < -tol else "flat")
    if not marks:
        return "single-point"
    i = 0
    while i < len(marks) and marks[i] == "up":
        i += 1
    head, tail = marks[:i], marks[i:]
    if not tail:
        return "monotone-increasing"
    if all(m == "flat" for m in tail):
        return "increasing-then-flat" if head else "flat"
    if all(m in ("flat", "down") for m in tail):
        return "increasing-then-declining" if head else "declining"
    return "irregular"


def sweep(cfg: ExperimentConfig, lengths: list[int]) -> dict:
    """Train once per prompt length and report the accuracy curve."""
    if not lengths:
        raise ValueError("sweep needs a nonempty prompt-length list")
    base_bundle = load_bundle(cfg)
    reports = []
    for k in lengths:
        vcfg = clone_config(cfg)
        vcfg.prompt.length = k
        vcfg.variant = f"k={k}"
        vcfg.report_path = None
        vcfg.dump_graph_dir = None
        reports.append(run_experiment(vcfg, bundle=base_bundle))
    accs = [r["dev_acc"] for r in reports]
    out = {
        "sweep": reports,
        "prompt_lengths": list(lengths),
        "dev_acc": accs,
        "curve_shape": curve_shape(accs),
    }
    if cfg.report_path:
        write_report(out, cfg.report_path)
    return out


def write_triples(store: TripleStore, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in store.triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


def write_paraphrases(para: ParaphraseDict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ent, text in para.entries.items():
            fh.write(f"{ent}\t{text}\n")
