"""Knowledge fusion and scoring over text segments and the graph.

The head re-grounds the graph with prompt output states (refresh), runs a
two-direction GRU over the four knowledge views (question text, choice
text, evidence text, refreshed graph), each step conditioned on the
summary context [h*; g'], splits the fused context into four groups and
rescales the knowledge groups by sigmoid similarity gates before a linear
score.  The score is returned pre-activation; the observable per-choice
output is its ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .graph import Triplet
from .prompts import HEAD, TAIL


def _l2(v: torch.Tensor) -> torch.Tensor:
    n = torch.linalg.vector_norm(v)
    if n.item() == 0.0:
        return v
    return v / n


def textual_summary(
    t_q: torch.Tensor, t_c: torch.Tensor, t_k: torch.Tensor
) -> torch.Tensor:
    """h*: the L2-normalised sum of the three segment embeddings."""
    return _l2(t_q + t_c + t_k)


def refreshed_features(
    h0: torch.Tensor,
    triplets: list[Triplet],
    triplet_outputs: dict[int, dict[str, torch.Tensor]],
    back_proj: nn.Module,
) -> torch.Tensor:
    """Replace features of entities that surfaced in prompt outputs.

    An entity appearing in one or more triplets gets the mean of its
    entity-slot output states, L2-normalised and projected back to graph
    width.  Untouched rows keep their prior features.
    """
    per_node: dict[int, list[torch.Tensor]] = {}
    for rank, comps in triplet_outputs.items():
        t = triplets[rank]
        if HEAD in comps:
            per_node.setdefault(t.head, []).append(comps[HEAD])
        if TAIL in comps:
            per_node.setdefault(t.tail, []).append(comps[TAIL])
    if not per_node:
        return h0
    out = h0.clone()
    for nid, vecs in per_node.items():
        pooled = _l2(torch.stack(vecs).mean(dim=0))
        out[nid] = back_proj(pooled)
    return out


GATE_PAIRS = (("k", "a"), ("k", "c"), ("g", "a"), ("g", "c"))


@dataclass
class FusionDetail:
    groups: dict[str, torch.Tensor]        # a, c, k, g after the split
    gates: dict[str, torch.Tensor]         # "ka", "kc", "ga", "gc"
    fused: torch.Tensor                    # t*, (4 * dim,)


class FusionHead(nn.Module):
    """Everything trainable on the reasoning side."""

    def __init__(
        self,
        text_dim: int,
        graph_dim: int,
        dim: int,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.dim = dim
        self.text_proj = nn.Linear(text_dim, dim)
        self.graph_proj = nn.Linear(graph_dim, dim)
        self.back_proj = nn.Linear(text_dim, graph_dim)
        self.gru = nn.GRU(
            input_size=dim + text_dim + graph_dim,
            hidden_size=dim,
            bidirectional=True,
        )
        self.ctx = nn.Linear(2 * dim, 4 * dim)
        self.w_h = nn.Linear(4 * dim, 1, bias=False)
        self.to(dtype)

    def fuse(
        self,
        t_q: torch.Tensor,
        t_c: torch.Tensor,
        t_k: torch.Tensor,
        g2: torch.Tensor,
        *,
        no_bigru: bool = False,
        no_gates: bool = False,
    ) -> tuple[torch.Tensor, FusionDetail]:
        """Returns (pre-activation score, detail)."""
        h_star = textual_summary(t_q, t_c, t_k)
        steps = [
            self.text_proj(t_q),
            self.text_proj(t_c),
            self.text_proj(t_k),
            self.graph_proj(g2),
        ]
        if no_bigru:
            t_a, t_cg, t_kg, t_gg = steps
        else:
            context = torch.cat([h_star, g2])
            seq = torch.stack([torch.cat([s, context]) for s in steps])
            _, h_n = self.gru(seq.unsqueeze(1))
            fused_ctx = self.ctx(torch.cat([h_n[0, 0], h_n[1, 0]]))
            t_a, t_cg, t_kg, t_gg = torch.chunk(fused_ctx, 4)
        groups = {"a": t_a, "c": t_cg, "k": t_kg, "g": t_gg}

        if no_gates:
            gates = {
                x + y: torch.tensor(0.5, dtype=t_a.dtype)
                for x, y in GATE_PAIRS
            }
        else:
            scale = self.dim**0.5
            gates = {
                x + y: torch.sigmoid(groups[x] @ groups[y] / scale)
                for x, y in GATE_PAIRS
            }
        fused = torch.cat(
            [
                groups["a"],
                groups["c"],
                (gates["ka"] + gates["kc"]) * groups["k"],
                (gates["ga"] + gates["gc"]) * groups["g"],
            ]
        )
        score = self.w_h(fused).squeeze(-1)
        return score, FusionDetail(groups=groups, gates=gates, fused=fused)


class MeanPoolHead(nn.Module):
    """Drop-in replacement for the fusion head: mean of the segment
    embeddings through a single linear score."""

    def __init__(self, text_dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.lin = nn.Linear(text_dim, 1)
        self.to(dtype)

    def forward(
        self, t_q: torch.Tensor, t_c: torch.Tensor, t_k: torch.Tensor
    ) -> torch.Tensor:
        pooled = torch.stack([t_q, t_c, t_k]).mean(dim=0)
        return self.lin(pooled).squeeze(-1)
