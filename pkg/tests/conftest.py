"""Shared fixtures: a hand-built knowledge store and tiny configs.

The store below is small enough to reason about by eye and rich enough
to exercise paths, paraphrases and pruning: a two-hop chain from "stove"
to "kitchen", a distractor entity "garden" with no path from the
question side, and one paraphrase entry.
"""

import pytest

from gsap.config import (
    EncoderConfig,
    ExperimentConfig,
    FusionConfig,
    GraphConfig,
    PromptConfig,
    TrainConfig,
)
from gsap.knowledge import EvidenceCorpus, ParaphraseDict, TripleStore


@pytest.fixture
def tiny_store() -> TripleStore:
    store = TripleStore()
    store.add("stove", "atlocation", "kitchen")
    store.add("pan", "usedfor", "cooking")
    store.add("stove", "partof", "pan")
    store.add("kitchen", "partof", "house")
    store.add("garden", "atlocation", "house")
    return store


@pytest.fixture
def tiny_para() -> ParaphraseDict:
    para = ParaphraseDict()
    para.entries["stove"] = "a hot appliance found in the kitchen"
    return para


@pytest.fixture
def tiny_corpus() -> EvidenceCorpus:
    return EvidenceCorpus(
        [
            "the stove sits in the kitchen",
            "a pan is used for cooking",
            "gardens have flowers",
        ]
    )


def tiny_experiment_config(**train_overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        synthetic={"seed": 5, "n": 6, "b": 3, "n_dev": 4},
        encoder=EncoderConfig(
            hidden_size=16, num_layers=2, num_heads=2, ff_size=32,
            max_len=64, init_seed=3,
        ),
        graph=GraphConfig(
            dim=8, num_layers=2, node_type_dim=4, rel_type_dim=4,
            relevance_dim=2, prune_threshold=0.0, max_paths=50,
            top_k_evidence=3,
        ),
        prompt=PromptConfig(length=4, hidden_size=8),
        fusion=FusionConfig(dim=8),
        train=TrainConfig(
            **{
                "lr_text": 1e-3, "lr_graph": 1e-3, "epochs": 1,
                "warmup_steps": 4, "seed": 0, **train_overrides,
            }
        ),
    )
    return cfg


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return tiny_experiment_config()
