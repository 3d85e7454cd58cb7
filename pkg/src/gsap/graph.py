"""Evidence graph construction over the knowledge stores.

For one (question, choice) pair the graph holds the grounded topic
entities, every store path of at most max_hops edges that starts at a
topic entity, a RelatedQA edge from each question entity to each choice
entity, and paraphrase entities linked to their topic by DefTop edges.
Node relevance is scored against the question text and low-relevance
non-topic nodes can be pruned before encoding.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import torch
from torch import nn

from .config import GraphConfig
from .knowledge import (
    DEF_TOP,
    RELATED_QA,
    ParaphraseDict,
    TripleStore,
    normalize_entity,
    query_paths,
)


class QuestionUngroundedError(ValueError):
    """No question token span matches any store entity."""


class EmptyGraphError(ValueError):
    """Raised when an operation needs at least one node."""


class NodeType(enum.IntEnum):
    QUESTION_ENTITY = 0
    CHOICE_ENTITY = 1
    OTHER_ENTITY = 2
    PARAPHRASE_ENTITY = 3


TOPIC_TYPES = (NodeType.QUESTION_ENTITY, NodeType.CHOICE_ENTITY)


@dataclass
class EvidenceNode:
    id: int
    surface: str
    node_type: NodeType
    relevance: float = 0.5
    embedding: Any = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EvidenceEdge:
    head: int        # node id, stored orientation
    tail: int
    relation: str


@dataclass
class EvidenceGraph:
    question: str = ""
    nodes: list[EvidenceNode] = field(default_factory=list)
    edges: list[EvidenceEdge] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._by_surface = {n.surface: n.id for n in self.nodes}
        self._edge_keys = {(e.head, e.tail, e.relation) for e in self.edges}

    def node_id(self, surface: str) -> int | None:
        return self._by_surface.get(normalize_entity(surface))

    def add_node(self, surface: str, node_type: NodeType) -> EvidenceNode:
        """Add a node unless the surface already exists; first type wins."""
        key = normalize_entity(surface)
        if key in self._by_surface:
            return self.nodes[self._by_surface[key]]
        node = EvidenceNode(len(self.nodes), key, node_type)
        self.nodes.append(node)
        self._by_surface[key] = node.id
        return node

    def add_edge(self, head: int, tail: int, relation: str) -> None:
        if head == tail:
            raise ValueError("edge endpoints must be distinct")
        key = (head, tail, relation)
        if key in self._edge_keys:
            return
        self._edge_keys.add(key)
        self.edges.append(EvidenceEdge(head, tail, relation))

    def neighbors(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n.id: set() for n in self.nodes}
        for e in self.edges:
            adj[e.head].add(e.tail)
            adj[e.tail].add(e.head)
        return adj

    def edges_between(self) -> dict[frozenset[int], list[int]]:
        table: dict[frozenset[int], list[int]] = {}
        for i, e in enumerate(self.edges):
            table.setdefault(frozenset((e.head, e.tail)), []).append(i)
        return table

    def topic_ids(self, node_type: NodeType) -> list[int]:
        return [n.id for n in self.nodes if n.node_type == node_type]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "surface": n.surface,
                    "type": n.node_type.name,
                    "relevance": n.relevance,
                }
                for n in self.nodes
            ],
            "edges": [
                {"head": e.head, "tail": e.tail, "relation": e.relation}
                for e in self.edges
            ],
        }

    @staticmethod
    def from_json_dict(raw: dict[str, Any], question: str = "") -> "EvidenceGraph":
        g = EvidenceGraph(question=question)
        for n in raw["nodes"]:
            node = g.add_node(n["surface"], NodeType[n["type"]])
            node.relevance = float(n.get("relevance", 0.5))
        for e in raw["edges"]:
            g.add_edge(e["head"], e["tail"], e["relation"])
        return g


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.casefold())


def build_lexicon(*sources: TripleStore | ParaphraseDict | Iterable[str]) -> frozenset[str]:
    """Union of entity surfaces across stores, normalised."""
    surfaces: set[str] = set()
    for src in sources:
        if isinstance(src, TripleStore):
            surfaces.update(src.entity_index)
        elif isinstance(src, ParaphraseDict):
            surfaces.update(src.entries)
        else:
            surfaces.update(normalize_entity(s) for s in src)
    return frozenset(surfaces)


def match_phrases(text: str, lexicon: frozenset[str]) -> list[str]:
    """Longest-match, non-overlapping entity spans, left to right.

    Matching is on normalised word tokens, so "Ice_Cream" in the lexicon
    hits "ice cream" in text.  Returns matches in text order (may repeat).
    """
    phrase_map: dict[tuple[str, ...], str] = {}
    max_len = 1
    for surface in lexicon:
        toks = tuple(_tokens(surface))
        if toks:
            phrase_map[toks] = surface
            max_len = max(max_len, len(toks))
    toks = _tokens(text)
    out: list[str] = []
    i = 0
    while i < len(toks):
        for span in range(min(max_len, len(toks) - i), 0, -1):
            cand = tuple(toks[i : i + span])
            if cand in phrase_map:
                out.append(phrase_map[cand])
                i += span
                break
        else:
            i += 1
    return out


def extract_topic_entities(
    question: str,
    choices: list[str],
    lexicon: frozenset[str],
) -> tuple[set[str], set[tuple[str, int]]]:
    """Ground the question and each choice against the entity lexicon.

    Returns (V_q, V_c) where V_c entries are (entity, choice_index).
    A question with no grounded entity is an error; an ungrounded choice
    simply contributes nothing.
    """
    v_q = set(match_phrases(question, lexicon))
    if not v_q:
        raise QuestionUngroundedError(
            f"QUESTION_UNGROUNDED: no lexicon entity found in {question!r}"
        )
    v_c: set[tuple[str, int]] = set()
    for idx, choice in enumerate(choices):
        for ent in match_phrases(choice, lexicon):
            v_c.add((ent, idx))
    return v_q, v_c


def build_graph(
    v_q: set[str],
    v_c: set[str],
    store: TripleStore,
    para: ParaphraseDict | None,
    cfg: GraphConfig,
    question: str = "",
    lexicon: frozenset[str] | None = None,
) -> EvidenceGraph:
    """Assemble the evidence graph for one choice's entity set.

    Insertion order is deterministic: question entities, choice entities,
    path nodes, then paraphrase entities.  A surface that appears twice
    keeps its first node type, and duplicate edges are dropped.
    """
    g = EvidenceGraph(question=question)
    vq_keys = sorted({normalize_entity(s) for s in v_q})
    vc_keys = sorted({normalize_entity(s) for s in v_c})
    for s in vq_keys:
        g.add_node(s, NodeType.QUESTION_ENTITY)
    for s in vc_keys:
        g.add_node(s, NodeType.CHOICE_ENTITY)

    topics = set(vq_keys) | set(vc_keys)
    for path in query_paths(store, topics, cfg.max_hops, cfg.max_paths):
        for hop in path:
            h = g.add_node(hop.triple.head, NodeType.OTHER_ENTITY)
            t = g.add_node(hop.triple.tail, NodeType.OTHER_ENTITY)
            if h.id != t.id:
                g.add_edge(h.id, t.id, hop.triple.relation)

    for q in vq_keys:
        qi = g.node_id(q)
        for c in vc_keys:
            ci = g.node_id(c)
            if qi != ci:
                g.add_edge(qi, ci, RELATED_QA)

    if para is not None and len(para) > 0:
        lex = lexicon if lexicon is not None else build_lexicon(store, para)
        for topic in sorted(topics):
            defn = para.get(topic)
            if not defn:
                continue
            ti = g.node_id(topic)
            for ent in match_phrases(defn, lex):
                node = g.add_node(ent, NodeType.PARAPHRASE_ENTITY)
                if node.id != ti:
                    g.add_edge(ti, node.id, DEF_TOP)
    return g


class RelevanceScorer(nn.Module):
    """Linear score over [phi(surface); phi(question)], squashed by sigmoid."""

    def __init__(self, text_dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.lin = nn.Linear(2 * text_dim, 1, dtype=dtype)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """feats: (N, 2*text_dim) -> (N,) relevance in (0, 1)."""
        return torch.sigmoid(self.lin(feats).squeeze(-1))


def score_relevance(
    graph: EvidenceGraph,
    phi: Callable[[str], torch.Tensor],
    scorer: RelevanceScorer,
) -> torch.Tensor:
    """Score every node against the graph's question text.

    Returns the (N,) relevance tensor (differentiable through the scorer)
    and mirrors the values onto node.relevance for pruning and dumps.
    """
    if not graph.nodes:
        raise EmptyGraphError("EMPTY_GRAPH: cannot score an empty graph")
    q_feat = phi(graph.question)
    feats = torch.stack(
        [torch.cat([phi(n.surface), q_feat]) for n in graph.nodes]
    )
    lam = scorer(feats)
    for node, value in zip(graph.nodes, lam.detach().tolist()):
        node.relevance = value
    return lam


def prune_indices(graph: EvidenceGraph, threshold: float) -> list[int]:
    """Ids of surviving nodes: topics always stay, others need relevance
    at or above the threshold."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    return [
        n.id
        for n in graph.nodes
        if n.node_type in TOPIC_TYPES or n.relevance >= threshold
    ]


def prune(graph: EvidenceGraph, threshold: float) -> EvidenceGraph:
    """Drop low-relevance non-topic nodes and their incident edges.

    Node ids are compacted in the surviving order.  Applying the same
    threshold twice is a no-op.
    """
    keep = prune_indices(graph, threshold)
    remap = {old: new for new, old in enumerate(keep)}
    out = EvidenceGraph(question=graph.question)
    for old in keep:
        n = graph.nodes[old]
        node = out.add_node(n.surface, n.node_type)
        node.relevance = n.relevance
        node.embedding = n.embedding
    for e in graph.edges:
        if e.head in remap and e.tail in remap:
            out.add_edge(remap[e.head], remap[e.tail], e.relation)
    return out


@dataclass(frozen=True)
class Triplet:
    """One selected edge in stored orientation, resolved to surfaces."""

    head: int
    relation: str
    tail: int
    edge_index: int
    head_surface: str
    tail_surface: str

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.head_surface, self.relation, self.tail_surface)


def select_qc_triplets(graph: EvidenceGraph) -> list[Triplet]:
    """Edges on any path of at most two hops from a question entity to a
    choice entity, as oriented triplets.

    Ordered by descending min(endpoint relevance); ties fall back to the
    (head surface, relation, tail surface) string.  With no store path the
    RelatedQA edges alone are returned.
    """
    q_ids = graph.topic_ids(NodeType.QUESTION_ENTITY)
    c_ids = graph.topic_ids(NodeType.CHOICE_ENTITY)
    adj = graph.neighbors()
    between = graph.edges_between()
    picked: set[int] = set()
    for q in q_ids:
        for c in c_ids:
            if q == c:
                continue
            picked.update(between.get(frozenset((q, c)), ()))
            for m in (adj[q] & adj[c]) - {q, c}:
                picked.update(between.get(frozenset((q, m)), ()))
                picked.update(between.get(frozenset((m, c)), ()))

    def sort_key(i: int):
        e = graph.edges[i]
        h, t = graph.nodes[e.head], graph.nodes[e.tail]
        return (
            -min(h.relevance, t.relevance),
            (h.surface, e.relation, t.surface),
        )

    out = []
    for i in sorted(picked, key=sort_key):
        e = graph.edges[i]
        out.append(
            Triplet(
                head=e.head,
                relation=e.relation,
                tail=e.tail,
                edge_index=i,
                head_surface=graph.nodes[e.head].surface,
                tail_surface=graph.nodes[e.tail].surface,
            )
        )
    return out
