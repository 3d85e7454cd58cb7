"""Dataset records and the synthetic benchmark generator.

The synthetic task is built so that graph structure alone determines the
answer: each question names a source entity whose chain in the knowledge
store reaches an answer entity in two hops (source -> middle -> answer),
the gold choice is that answer, and distractors are other members of a
shared answer pool, unreachable from this source within two hops.  Pool
entities are reused across chains as golds and as distractors, in train
and dev alike, so entity identity carries no label signal; train and dev
chains use disjoint source groups, so (source, answer) pairs cannot be
memorised either.  Only reachability generalises.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass

from .knowledge import ParaphraseDict, TripleStore

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """Malformed dataset line; message carries file and line number."""


@dataclass(frozen=True)
class QAInstance:
    id: str
    question: str
    choices: tuple[str, ...]
    answer: int

    def __post_init__(self) -> None:
        if not 2 <= len(self.choices) <= 5:
            raise ValueError(
                f"instance {self.id}: need 2..5 choices, got {len(self.choices)}"
            )
        if not 0 <= self.answer < len(self.choices):
            raise ValueError(
                f"instance {self.id}: answer {self.answer} out of range"
            )


def load_dataset(path: str) -> list[QAInstance]:
    """Read a JSONL file of {id, question, choices, answer} records.

    Invalid lines are skipped and counted; only a file yielding zero
    valid instances is an error.
    """
    out: list[QAInstance] = []
    skipped = 0
    first_bad = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                out.append(
                    QAInstance(
                        id=str(raw["id"]),
                        question=str(raw["question"]),
                        choices=tuple(str(c) for c in raw["choices"]),
                        answer=int(raw["answer"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                skipped += 1
                if not first_bad:
                    first_bad = f"{path}:{lineno}: {exc}"
    if not out:
        raise DatasetFormatError(
            f"{path}: no valid instances"
            + (f" ({skipped} invalid, first: {first_bad})" if skipped else "")
        )
    if skipped:
        log.warning("%s: skipped %d invalid lines (first: %s)",
                    path, skipped, first_bad)
    return out


def save_dataset(instances: list[QAInstance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                json.dumps(
                    {
                        "id": inst.id,
                        "question": inst.question,
                        "choices": list(inst.choices),
                        "answer": inst.answer,
                    }
                )
                + "\n"
            )


_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
_RELATIONS = ("usedfor", "partof", "atlocation", "causes", "madeof", "desires")
_TEMPLATES = (
    "what belongs with {src} here",
    "which option goes with {src}",
    "what would you find near {src}",
)
_PARA_TEMPLATES = (
    "a small thing kept close to {other}",
    "something often stored beside {other}",
)


def _pseudoword(rng: random.Random, index: int) -> str:
    body = "".join(
        rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(2)
    )
    return f"{body}{index}"


@dataclass
class _Group:
    source: str
    middle: str
    answer: str
    members: list[str]


def _random_edge(rng: random.Random, store: TripleStore, a: str, b: str) -> None:
    rel = rng.choice(_RELATIONS)
    if rng.random() < 0.5:
        store.add(a, rel, b)
    else:
        store.add(b, rel, a)


def _build_group(rng: random.Random, store: TripleStore,
                 para: ParaphraseDict, base: int, answer: str) -> _Group:
    """One chain motif source -r1- middle -r2- answer, where the answer is
    a shared pool entity; source, middle and their decoys are fresh."""
    source = _pseudoword(rng, base)
    middle = _pseudoword(rng, base + 1)
    members = [source, middle, answer]

    _random_edge(rng, store, source, middle)
    _random_edge(rng, store, middle, answer)
    decoy_base = base + 2
    for anchor in (source, middle):
        for _ in range(rng.randint(1, 3)):
            decoy = _pseudoword(rng, decoy_base)
            decoy_base += 1
            members.append(decoy)
            _random_edge(rng, store, anchor, decoy)

    if rng.random() < 0.5:
        others = [m for m in members if m != source]
        text = rng.choice(_PARA_TEMPLATES).format(other=rng.choice(others))
        para.entries[source] = text
    return _Group(source, middle, answer, members)


def _build_answer_pool(
    rng: random.Random, store: TripleStore, para: ParaphraseDict, size: int
) -> list[str]:
    """Shared answer entities, each decorated once with its own decoys.

    Sharing answers across groups strips all label signal from entity
    identity: every pool entity is the gold of some instances and a
    distractor of others, so only reachability from the question's
    source separates them.
    """
    pool = []
    for j in range(size):
        name = _pseudoword(rng, 1_000_000 + 10 * j)
        pool.append(name)
        decoys = []
        for d in range(rng.randint(1, 3)):
            decoy = _pseudoword(rng, 1_000_000 + 10 * j + 1 + d)
            decoys.append(decoy)
            _random_edge(rng, store, name, decoy)
        if rng.random() < 0.5:
            text = rng.choice(_PARA_TEMPLATES).format(other=rng.choice(decoys))
            para.entries[name] = text
    return pool


def generate_synthetic(
    seed: int,
    n: int,
    b: int = 4,
    kg_size: int | None = None,
    n_dev: int | None = None,
) -> tuple[list[QAInstance], list[QAInstance], TripleStore, ParaphraseDict]:
    """Deterministic (train, dev, store, paraphrases) for a given seed.

    n is the train size; n_dev defaults to 2n/5.  kg_size fixes the number
    of chain groups (default: one per instance).  Train and dev draw their
    chains from disjoint groups, while the answer entities come from one
    shared pool, so memorising either side of a (source, answer) pair
    cannot solve dev.
    """
    if not 2 <= b <= 5:
        raise ValueError("b must lie in 2..5")
    if n < 1:
        raise ValueError("n must be positive")
    n_dev = max(1, (2 * n) // 5) if n_dev is None else n_dev
    rng = random.Random(seed)
    store = TripleStore()
    para = ParaphraseDict()

    total_groups = kg_size if kg_size is not None else n + n_dev
    if total_groups < 2:
        raise ValueError("kg_size too small: need at least 2 groups")
    pool = _build_answer_pool(
        rng, store, para, size=max(b + 2, (total_groups + 5) // 6)
    )
    groups: list[_Group] = []
    base = 0
    for gid in range(total_groups):
        g = _build_group(rng, store, para, base, answer=pool[gid % len(pool)])
        groups.append(g)
        base += 20  # name indices never collide across groups

    if kg_size is None:
        split = n
    else:
        split = max(1, min(total_groups - 1,
                           round(total_groups * n / (n + n_dev))))
    train_pool = groups[:split]
    dev_pool = groups[split:]

    def make_instances(src_pool: list[_Group], count: int, tag: str) -> list[QAInstance]:
        out = []
        for i in range(count):
            src_group = src_pool[i] if count <= len(src_pool) else rng.choice(src_pool)
            others = [a for a in pool if a != src_group.answer]
            distractors = rng.sample(others, b - 1)
            gold_pos = rng.randrange(b)
            choices = distractors[:gold_pos] + [src_group.answer] + distractors[gold_pos:]
            question = rng.choice(_TEMPLATES).format(src=src_group.source)
            out.append(
                QAInstance(
                    id=f"{tag}-{i:05d}",
                    question=question,
                    choices=tuple(choices),
                    answer=gold_pos,
                )
            )
        return out

    train = make_instances(train_pool, n, "syn-train")
    dev = make_instances(dev_pool, n_dev, "syn-dev")
    return train, dev, store, para
