"""Training loop: softmax cross-entropy over per-choice scores, AdamW
with two learning-rate groups, linear warmup, gradient clipping, and a
per-epoch dev pass that tracks the best trainable state.

The loss is applied to the pre-activation scores so gradients flow for
negative values too; the reported prediction uses the ReLU output.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TrainConfig
from .data import QAInstance
from .model import GSAPModel


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the step and instance."""


def seed_all(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def cross_entropy_loss(scores: torch.Tensor, gold: int) -> torch.Tensor:
    """Stable softmax cross-entropy of a 1-D score vector at gold."""
    if not 0 <= gold < scores.shape[0]:
        raise ValueError(f"gold index {gold} out of range")
    return torch.logsumexp(scores, dim=0) - scores[gold]


def evaluate(model: GSAPModel, dataset: list[QAInstance]) -> float:
    """Accuracy of the argmax prediction (lowest index wins ties)."""
    if not dataset:
        return 0.0
    was_training = model.training
    model.eval()
    correct = 0
    with torch.no_grad():
        for inst in dataset:
            _, pred = model.predict(inst)
            correct += int(pred == inst.answer)
    if was_training:
        model.train()
    return correct / len(dataset)


def freeze_check(model: GSAPModel) -> bool:
    """True when the text encoder is bit-identical to its init snapshot."""
    return model.encoder.weights_unchanged()


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    best_dev_acc: float = 0.0
    final_dev_acc: float = 0.0
    steps: int = 0
    wall_time_s: float = 0.0
    best_state: dict[str, torch.Tensor] = field(default_factory=dict)


def train(
    model: GSAPModel,
    train_set: list[QAInstance],
    dev_set: list[QAInstance],
    cfg: TrainConfig,
) -> TrainResult:
    """Optimise the trainable parameters; the encoder never moves.

    Restores the best-dev trainable state into the model before returning.
    Raises TrainingDivergedError on a non-finite loss.
    """
    seed_all(cfg.seed)
    start = time.monotonic()
    result = TrainResult(best_state=model.trainable_state())

    groups = []
    text_params = model.text_side_parameters()
    graph_params = model.graph_side_parameters()
    if text_params:
        groups.append({"params": text_params, "lr": cfg.lr_text})
    if graph_params:
        groups.append({"params": graph_params, "lr": cfg.lr_graph})
    if not groups:
        raise ValueError("model has no trainable parameters")
    opt = torch.optim.AdamW(groups, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt,
        lambda step: min(1.0, (step + 1) / max(1, cfg.warmup_steps)),
    )
    all_params = text_params + graph_params
    accum = max(1, cfg.grad_accum) * max(1, cfg.batch_size)

    step = 0
    stop = False
    model.train()
    for epoch in range(cfg.epochs):
        if stop:
            break
        order = list(range(len(train_set)))
        random.Random(cfg.seed * 9973 + epoch).shuffle(order)
        losses = []
        opt.zero_grad()
        pending = 0
        for pos, idx in enumerate(order):
            inst = train_set[idx]
            scores = model(inst)
            loss = cross_entropy_loss(scores, inst.answer)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} on instance {inst.id}"
                )
            losses.append(float(loss.detach()))
            (loss / accum).backward()
            pending += 1
            if pending == accum or pos == len(order) - 1:
                if cfg.clip_norm and cfg.clip_norm > 0:
                    torch.nn.utils.clip_grad_norm_(all_params, cfg.clip_norm)
                opt.step()
                sched.step()
                opt.zero_grad()
                pending = 0
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break
        dev_acc = evaluate(model, dev_set)
        result.metrics.append(
            {
                "epoch": epoch,
                "step": step,
                "train_loss": float(np.mean(losses)) if losses else 0.0,
                "dev_acc": dev_acc,
            }
        )
        if dev_acc >= result.best_dev_acc:
            result.best_dev_acc = dev_acc
            result.best_state = model.trainable_state()
        result.final_dev_acc = dev_acc

    model.load_trainable_state(result.best_state)
    result.steps = step
    result.wall_time_s = time.monotonic() - start
    if cfg.log_path:
        with open(cfg.log_path, "w", encoding="utf-8") as fh:
            for row in result.metrics:
                fh.write(json.dumps(row) + "\n")
    return result
