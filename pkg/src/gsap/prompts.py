"""Triplet prompts for the frozen text encoder.

Each selected graph triplet is mapped to up to three prompt vectors
(head entity, relation, tail entity) through a shared gated MLP that
mixes in the pooled graph embedding:

    F(e, g) = W_out @ relu(W_in @ (e + W_g @ g))

Triplets are distributed round-robin over the prompting layers in rank
order; slots no triplet claims hold learned null vectors, and triplets
beyond capacity are dropped from the low-rank end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .graph import Triplet


class UnknownRelationError(KeyError):
    """Relation label missing from the configured vocabulary."""


# component tags, in slot order within one triplet
HEAD, RELATION, TAIL = "head", "relation", "tail"


@dataclass
class PromptSet:
    """Per-layer prompt matrices plus the slot bookkeeping.

    layers: (p, k, d) tensor; slot_roles[j][s] is (triplet_rank, component)
    or None for a null slot; triplets is the selected list the ranks point
    into.
    """

    layers: torch.Tensor
    slot_roles: list[list[tuple[int, str] | None]]
    triplets: list[Triplet] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return int(self.layers.shape[0])

    @property
    def length(self) -> int:
        return int(self.layers.shape[1]) if self.num_layers else 0

    def is_empty(self) -> bool:
        return self.num_layers == 0 or self.length == 0


class PromptGenerator(nn.Module):
    """Turns selected triplets into a PromptSet.

    Entity inputs are final-layer node states of the graph encoder;
    relations come from an owned embedding table in graph space.  Both are
    brought into prompt space by a shared projection before the gated MLP.
    """

    def __init__(
        self,
        graph_dim: int,
        prompt_dim: int,
        hidden_dim: int,
        relation_vocab: list[str],
        length: int,
        num_layers: int,
        include_entities: bool = True,
        include_relation: bool = True,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.k = length
        self.p = num_layers
        self.include_entities = include_entities
        self.include_relation = include_relation
        self.rel_to_idx = {r: i for i, r in enumerate(relation_vocab)}
        self.rel_table = nn.Embedding(max(len(relation_vocab), 1), graph_dim)
        self.project = nn.Linear(graph_dim, prompt_dim, bias=False)
        self.w_g = nn.Linear(graph_dim, prompt_dim, bias=False)
        self.w_in = nn.Linear(prompt_dim, hidden_dim, bias=False)
        self.w_out = nn.Linear(hidden_dim, prompt_dim, bias=False)
        self.null_prompts = nn.Parameter(
            torch.randn(num_layers, length, prompt_dim) * 0.02
        )
        self.to(dtype)

    @property
    def slots_per_triplet(self) -> int:
        return 2 * self.include_entities + self.include_relation

    @property
    def capacity(self) -> int:
        """How many triplets fit across all prompting layers."""
        spt = self.slots_per_triplet
        if spt == 0 or self.p == 0:
            return 0
        return self.p * (self.k // spt)

    def transform(self, e: torch.Tensor, g_vec: torch.Tensor) -> torch.Tensor:
        """F(e, g) for e already in prompt space."""
        return self.w_out(torch.relu(self.w_in(e + self.w_g(g_vec))))

    def relation_id(self, label: str) -> int:
        try:
            return self.rel_to_idx[label]
        except KeyError:
            raise UnknownRelationError(
                f"UNKNOWN_RELATION: {label!r} not in relation vocabulary"
            ) from None

    def generate(
        self,
        triplets: list[Triplet],
        node_states: torch.Tensor,
        g_vec: torch.Tensor,
    ) -> PromptSet:
        """Build the prompt set for one forward pass.

        node_states: (N, graph_dim) final graph-encoder states indexed by
        node id in the encoded graph.  Triplets beyond capacity are dropped.
        """
        p, k = self.p, self.k
        roles: list[list[tuple[int, str] | None]] = [
            [None] * k for _ in range(p)
        ]
        if p == 0 or k == 0:
            return PromptSet(self.null_prompts[:0], roles, list(triplets))

        prompts = self.null_prompts.clone()
        spt = self.slots_per_triplet
        kept = list(triplets)[: self.capacity]
        for rank, t in enumerate(kept):
            layer = rank % p
            start = (rank // p) * spt
            slot = start
            if self.include_entities:
                e = self.project(node_states[t.head])
                prompts[layer, slot] = self.transform(e, g_vec)
                roles[layer][slot] = (rank, HEAD)
                slot += 1
            if self.include_relation:
                rid = self.relation_id(t.relation)
                e = self.project(self.rel_table.weight[rid])
                prompts[layer, slot] = self.transform(e, g_vec)
                roles[layer][slot] = (rank, RELATION)
                slot += 1
            if self.include_entities:
                e = self.project(node_states[t.tail])
                prompts[layer, slot] = self.transform(e, g_vec)
                roles[layer][slot] = (rank, TAIL)
        return PromptSet(prompts, roles, kept)

    def random_set(self, generator: torch.Generator | None = None) -> PromptSet:
        """Fresh unit-normal prompts, no triplet assignments, untrained."""
        prompts = torch.randn(
            self.p, self.k, self.null_prompts.shape[-1],
            dtype=self.null_prompts.dtype, generator=generator,
        )
        roles: list[list[tuple[int, str] | None]] = [
            [None] * self.k for _ in range(self.p)
        ]
        return PromptSet(prompts, roles, [])
