"""Graph-structure-aware prompting for multiple-choice QA.

The pipeline grounds question and choice entities in a knowledge store,
builds and prunes a per-choice evidence graph, encodes it with an
attention-based relational encoder, injects graph-conditioned prompts
into a frozen text encoder, and fuses text and graph channels with a
gated recurrent head into one score per choice.
"""

from .config import (
    AblationFlags,
    ConflictingFlagsError,
    EncoderConfig,
    ExperimentConfig,
    FusionConfig,
    GraphConfig,
    PromptConfig,
    TrainConfig,
)
from .data import QAInstance, generate_synthetic, load_dataset, save_dataset
from .model import GSAPModel
from .trainer import TrainResult, cross_entropy_loss, evaluate, freeze_check, train

__all__ = [
    "AblationFlags",
    "ConflictingFlagsError",
    "EncoderConfig",
    "ExperimentConfig",
    "FusionConfig",
    "GSAPModel",
    "GraphConfig",
    "PromptConfig",
    "QAInstance",
    "TrainConfig",
    "TrainResult",
    "cross_entropy_loss",
    "evaluate",
    "freeze_check",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "train",
]

__version__ = "0.1.0"
