"""File-backed knowledge stores.

Three flat-file sources feed graph construction: a triple TSV
(head<TAB>relation<TAB>tail), a paraphrase TSV (entity<TAB>definition) and a
plain-text corpus with one sentence per line.  Everything is loaded eagerly
and treated as read-only afterwards, so the stores are safe to share across
threads.

Entity surfaces are normalised (case-folded, underscores to spaces, single
spaces) so that "Ice_Cream" in a triple file matches "ice cream" in question
text.  Relation labels keep their original spelling; the two reserved labels
below never come from files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Reserved relation labels used by graph construction.  They are part of the
# relation vocabulary even when no loaded triple uses them.
DEF_TOP = "DefTop"          # topic entity -> entity found in its definition
RELATED_QA = "RelatedQA"    # question entity -> choice entity

RESERVED_RELATIONS = (DEF_TOP, RELATED_QA)


class StoreFormatError(ValueError):
    """Malformed store file; message carries file name and line number."""


def normalize_entity(surface: str) -> str:
    """Canonical entity key: case-folded, underscores as spaces, one space."""
    return re.sub(r"\s+", " ", surface.replace("_", " ").strip().casefold())


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass
class TripleStore:
    """Deduplicated triples plus the indexes graph construction needs."""

    triples: list[Triple] = field(default_factory=list)
    entity_index: dict[str, list[int]] = field(default_factory=dict)
    relation_vocab: list[str] = field(default_factory=lambda: list(RESERVED_RELATIONS))

    def add(self, head: str, relation: str, tail: str) -> None:
        t = Triple(normalize_entity(head), relation.strip(), normalize_entity(tail))
        if not t.head or not t.relation or not t.tail:
            raise ValueError("triple fields must be non-empty")
        if t in self._seen:
            return
        self._seen.add(t)
        idx = len(self.triples)
        self.triples.append(t)
        self.entity_index.setdefault(t.head, []).append(idx)
        if t.tail != t.head:
            self.entity_index.setdefault(t.tail, []).append(idx)
        if t.relation not in self._rels:
            self._rels.add(t.relation)
            self.relation_vocab.append(t.relation)

    def __post_init__(self) -> None:
        # Rebuild indexes from whatever triples were supplied directly.
        given = list(self.triples)
        self.triples = []
        self.entity_index = {}
        self._seen: set[Triple] = set()
        self._rels: set[str] = set(self.relation_vocab)
        for t in given:
            self.add(t.head, t.relation, t.tail)

    def __contains__(self, surface: str) -> bool:
        return normalize_entity(surface) in self.entity_index

    def __len__(self) -> int:
        return len(self.triples)

    def triples_at(self, surface: str) -> list[Triple]:
        key = normalize_entity(surface)
        return [self.triples[i] for i in self.entity_index.get(key, [])]


@dataclass
class ParaphraseDict:
    """entity -> one-sentence definition."""

    entries: dict[str, str] = field(default_factory=dict)

    def get(self, surface: str) -> str | None:
        return self.entries.get(normalize_entity(surface))

    def __len__(self) -> int:
        return len(self.entries)


def _overlap_score(question_tokens: frozenset[str], sentence: str) -> int:
    return len(question_tokens & frozenset(_word_tokens(sentence)))


@dataclass
class EvidenceCorpus:
    """Sentence pool scored against the question by lexical overlap."""

    sentences: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)


def _word_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.casefold())


def _read_tsv(path: str, n_fields: int):
    """Yield (lineno, fields) for non-comment lines, checking field count."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields or any(not f.strip() for f in fields):
                raise StoreFormatError(
                    f"{path}:{lineno}: expected {n_fields} non-empty "
                    f"tab-separated fields, got {line!r}"
                )
            yield lineno, fields


def load_triples(path: str) -> TripleStore:
    """Load a head<TAB>relation<TAB>tail file; '#' lines are comments.

    Duplicate triples (after normalisation) are dropped silently.
    """
    store = TripleStore()
    for _, (head, rel, tail) in _read_tsv(path, 3):
        store.add(head, rel, tail)
    return store


def load_paraphrases(path: str) -> ParaphraseDict:
    """Load an entity<TAB>definition file.  Later duplicates win."""
    para = ParaphraseDict()
    for _, (entity, definition) in _read_tsv(path, 2):
        para.entries[normalize_entity(entity)] = definition.strip()
    return para


def load_corpus(path: str) -> EvidenceCorpus:
    """Load one sentence per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        sentences = [line.strip() for line in fh if line.strip()]
    return EvidenceCorpus(sentences)


@dataclass(frozen=True)
class PathHop:
    """One traversal step: the stored triple plus the walk direction."""

    triple: Triple
    source: str   # entity the walk left from
    target: str   # entity the walk arrived at


def _adjacency(store: TripleStore) -> dict[str, list[tuple[Triple, str]]]:
    adj: dict[str, list[tuple[Triple, str]]] = {}
    for t in store.triples:
        adj.setdefault(t.head, []).append((t, t.tail))
        if t.tail != t.head:
            adj.setdefault(t.tail, []).append((t, t.head))
    return adj


def _path_key(path: tuple[PathHop, ...]) -> str:
    # The key follows walk direction, not stored orientation, so the result
    # set is stable when the input file flips head/tail.
    return " / ".join(f"{h.source}|{h.triple.relation}|{h.target}" for h in path)


def query_paths(
    store: TripleStore,
    topics: set[str] | frozenset[str] | list[str],
    max_hops: int = 2,
    max_paths: int = 100,
) -> list[tuple[PathHop, ...]]:
    """Enumerate undirected simple paths of 1..max_hops edges from each topic.

    Paths are sorted by their canonical walk string and truncated to
    max_paths, which makes the result independent of file line order.
    Topics absent from the store contribute nothing.
    """
    if max_hops < 1:
        return []
    adj = _adjacency(store)
    found: dict[str, tuple[PathHop, ...]] = {}

    def extend(prefix: tuple[PathHop, ...], at: str, visited: frozenset[str]) -> None:
        if len(prefix) >= max_hops:
            return
        for triple, nxt in adj.get(at, ()):
            if nxt in visited:
                continue
            path = prefix + (PathHop(triple, at, nxt),)
            found.setdefault(_path_key(path), path)
            extend(path, nxt, visited | {nxt})

    for topic in sorted({normalize_entity(t) for t in topics}):
        if topic in adj:
            extend((), topic, frozenset([topic]))

    ordered = [found[k] for k in sorted(found)]
    return ordered[:max_paths]


def retrieve_evidence(
    corpus: EvidenceCorpus, question: str, top_k: int = 10
) -> list[str]:
    """Top-k corpus sentences by word overlap with the question.

    Ties keep corpus order, so the top-k list is a prefix of the full
    ranking.  An empty corpus returns an empty list.
    """
    if top_k <= 0 or not corpus.sentences:
        return []
    qtok = frozenset(_word_tokens(question))
    ranked = sorted(
        range(len(corpus.sentences)),
        key=lambda i: (-_overlap_score(qtok, corpus.sentences[i]), i),
    )
    return [corpus.sentences[i] for i in ranked[:top_k]]
