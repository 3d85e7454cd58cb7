"""Configuration dataclasses for the pipeline.

Defaults follow the reference operating point: 300-dim graph features,
5 graph layers, prompt length 16 on every transformer layer, AdamW with
1e-5 (text-side) / 1e-4 (graph-side) learning rates, 600 warmup steps,
6 epochs, batch size 1.  Desk-scale experiments override dimensions and
learning rates through ExperimentConfig.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any


class ConflictingFlagsError(ValueError):
    """Raised when mutually exclusive ablation flags are both enabled."""


@dataclass
class EncoderConfig:
    """Frozen text encoder geometry."""

    hidden_size: int = 128
    num_layers: int = 4
    num_heads: int = 4
    ff_size: int = 512
    max_len: int = 256
    vocab_size: int = 0          # set once the vocabulary is built
    init_seed: int = 0
    checkpoint: str | None = None  # optional tensor-manifest to load

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")


@dataclass
class GraphConfig:
    """Evidence-graph construction and graph-encoder geometry."""

    dim: int = 300               # node feature width
    num_layers: int = 5
    node_type_dim: int = 16
    rel_type_dim: int = 16
    relevance_dim: int = 8       # width of the lifted relevance feature
    prune_threshold: float = 0.1
    max_hops: int = 2
    max_paths: int = 100
    top_k_evidence: int = 10


@dataclass
class PromptConfig:
    """Prompt geometry: k slots per prompting layer, layers 1..p."""

    length: int = 16
    layers: int | None = None    # None means every encoder layer
    hidden_size: int = 128       # width of the prompt MLP hidden layer

    def resolved_layers(self, encoder_layers: int) -> int:
        p = encoder_layers if self.layers is None else self.layers
        if not 0 <= p <= encoder_layers:
            raise ValueError(f"prompt layers must lie in [0, {encoder_layers}]")
        return p


@dataclass
class FusionConfig:
    """Knowledge-fusion head geometry."""

    dim: int = 128               # d_f, the fused segment width
    own_gnn: bool = False        # re-encode with a separate graph encoder


@dataclass
class TrainConfig:
    lr_text: float = 1e-5        # prompt, mapping and projection parameters
    lr_graph: float = 1e-4       # graph encoder and fusion head
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    epochs: int = 6
    warmup_steps: int = 600
    batch_size: int = 1
    grad_accum: int = 1
    seed: int = 0
    max_steps: int | None = None  # optional hard cap, mostly for smoke runs
    log_path: str | None = None   # JSONL metric log


@dataclass
class AblationFlags:
    """Every switch the ablation harness understands.

    no_prompt and random_prompt are mutually exclusive; everything else
    composes freely.
    """

    no_prompt: bool = False
    random_prompt: bool = False
    no_sapl: bool = False        # bypass the text encoder: bag-of-embedding means
    no_prompt_entity: bool = False
    no_prompt_relation: bool = False
    no_paraphrase_nodes: bool = False
    no_paraphrase_texts: bool = False
    no_hmpr: bool = False
    no_bigru: bool = False
    no_relevance_score: bool = False
    no_graph_attention: bool = False
    no_knowledge_attention: bool = False
    kg_sources: tuple[str, ...] = ("triples", "paraphrases", "corpus")

    def validate(self) -> None:
        if self.no_prompt and self.random_prompt:
            raise ConflictingFlagsError(
                "CONFLICTING_FLAGS: no_prompt and random_prompt cannot both be set"
            )
        unknown = set(self.kg_sources) - {"triples", "paraphrases", "corpus"}
        if unknown:
            raise ValueError(f"unknown kg_sources: {sorted(unknown)}")

    def enabled(self) -> list[str]:
        names = [
            f.name for f in dataclasses.fields(self)
            if f.name != "kg_sources" and getattr(self, f.name)
        ]
        if set(self.kg_sources) != {"triples", "paraphrases", "corpus"}:
            names.append("kg_sources=" + ",".join(self.kg_sources))
        return names


@dataclass
class ExperimentConfig:
    """Everything a single run needs: data, geometry, training, flags."""

    # data: either explicit files or a synthetic generator block
    triples_path: str | None = None
    paraphrases_path: str | None = None
    corpus_path: str | None = None
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    vocab_path: str | None = None
    synthetic: dict[str, Any] | None = None   # {"seed","n","n_dev","b","kg_size"}

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)

    verbalize_triplets: bool = False  # add selected triples to the evidence text
    variant: str = "full"
    report_path: str | None = None
    dump_graph_dir: str | None = None
    sweep_prompt_lengths: tuple[int, ...] = ()

    def validate(self) -> None:
        self.flags.validate()
        have_files = self.train_path is not None and self.dev_path is not None
        if not have_files and self.synthetic is None:
            raise ValueError("config needs train/dev paths or a synthetic block")

    @staticmethod
    def from_dict(raw: dict[str, Any]) -> "ExperimentConfig":
        return _dataclass_from_dict(ExperimentConfig, raw)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(path: str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))


def _dataclass_from_dict(cls: type, raw: dict[str, Any]) -> Any:
    """Build a (possibly nested) dataclass from plain dicts, with checks."""
    if not dataclasses.is_dataclass(cls):
        return raw
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in raw.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) and isinstance(value, dict):
            kwargs[name] = _dataclass_from_dict(f.type, value)
        elif isinstance(value, dict) and name in (
            "encoder", "graph", "prompt", "fusion", "train", "flags"
        ):
            kwargs[name] = _dataclass_from_dict(_NESTED[name], value)
        elif isinstance(value, list) and name in ("kg_sources", "sweep_prompt_lengths"):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    "encoder": EncoderConfig,
    "graph": GraphConfig,
    "prompt": PromptConfig,
    "fusion": FusionConfig,
    "train": TrainConfig,
    "flags": AblationFlags,
}
