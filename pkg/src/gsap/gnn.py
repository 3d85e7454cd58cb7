"""Attention-based relational encoder over evidence graphs.

Every undirected edge contributes two directed message channels and each
node adds a self channel with a dedicated internal relation, so the
attention pool for a receiving node n is its in-neighbourhood plus n
itself.  Messages carry sender state, sender type and a typed relation
feature; attention queries come from senders, keys from the receiver and
the channel relation, both salted with a lifted relevance feature.  Each
layer aggregates with softmax weights per receiver, applies a shared
affine plus a per-layer batch norm over nodes, and adds the residual.
The graph embedding is the mean of final node states.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import GraphConfig
from .graph import EmptyGraphError, EvidenceGraph
from .prompts import UnknownRelationError

SELF_RELATION = "<self>"
NUM_NODE_TYPES = 4


@dataclass
class GraphChannels:
    """Directed message channels for one graph, in deterministic order:
    the two directions of every edge, then one self channel per node."""

    senders: torch.Tensor        # (C,) long
    receivers: torch.Tensor      # (C,) long
    rel_ids: torch.Tensor        # (C,) long, self channels use the last id
    node_types: torch.Tensor     # (N,) long
    num_nodes: int
    keys: list[tuple[int, int, str]]   # (sender, receiver, relation label)


def prepare_channels(
    graph: EvidenceGraph, rel_to_idx: dict[str, int]
) -> GraphChannels:
    if not graph.nodes:
        raise EmptyGraphError("EMPTY_GRAPH: graph has no nodes")
    self_id = len(rel_to_idx)
    send, recv, rels, keys = [], [], [], []
    for e in graph.edges:
        if e.relation not in rel_to_idx:
            raise UnknownRelationError(
                f"UNKNOWN_RELATION: {e.relation!r} not in relation vocabulary"
            )
        rid = rel_to_idx[e.relation]
        send += [e.head, e.tail]
        recv += [e.tail, e.head]
        rels += [rid, rid]
        keys += [(e.head, e.tail, e.relation), (e.tail, e.head, e.relation)]
    for n in graph.nodes:
        send.append(n.id)
        recv.append(n.id)
        rels.append(self_id)
        keys.append((n.id, n.id, SELF_RELATION))
    return GraphChannels(
        senders=torch.tensor(send, dtype=torch.long),
        receivers=torch.tensor(recv, dtype=torch.long),
        rel_ids=torch.tensor(rels, dtype=torch.long),
        node_types=torch.tensor(
            [int(n.node_type) for n in graph.nodes], dtype=torch.long
        ),
        num_nodes=len(graph.nodes),
        keys=keys,
    )


class NodeBatchNorm(nn.Module):
    """Batch norm over the node axis.

    Training mode normalises with batch statistics and updates running
    stats; a single-node graph skips normalisation (zero variance) and
    only applies the affine.  Eval mode always uses running statistics.
    """

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] > 1:
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            with torch.no_grad():
                m = self.momentum
                self.running_mean.mul_(1 - m).add_(m * mean)
                self.running_var.mul_(1 - m).add_(
                    m * x.var(dim=0, unbiased=True)
                )
            xn = (x - mean) / torch.sqrt(var + self.eps)
        elif self.training:
            xn = x
        else:
            xn = (x - self.running_mean) / torch.sqrt(
                self.running_var + self.eps
            )
        return xn * self.weight + self.bias


class RelationalGraphEncoder(nn.Module):
    """The layered message-passing encoder; weights shared across layers
    except for the per-layer batch norms."""

    def __init__(
        self,
        cfg: GraphConfig,
        relation_vocab: list[str],
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.cfg = cfg
        self.rel_to_idx = {r: i for i, r in enumerate(relation_vocab)}
        n_rel = len(relation_vocab) + 1          # plus the self relation
        d, ntd, rtd, lvd = (
            cfg.dim, cfg.node_type_dim, cfg.rel_type_dim, cfg.relevance_dim
        )
        self.f_v = nn.Linear(NUM_NODE_TYPES, ntd)
        self.f_r = nn.Linear(2 * NUM_NODE_TYPES + n_rel, rtd)
        self.f_lam = nn.Linear(1, lvd)
        self.f_msg = nn.Linear(d + ntd + rtd, d)
        self.f_q = nn.Linear(d + ntd + lvd, d)
        self.f_k = nn.Linear(d + ntd + lvd + rtd, d)
        self.f_n = nn.Linear(d, d)
        self.norms = nn.ModuleList(
            NodeBatchNorm(d) for _ in range(cfg.num_layers)
        )
        self.n_rel = n_rel
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.f_n.weight.dtype

    def channels(self, graph: EvidenceGraph) -> GraphChannels:
        return prepare_channels(graph, self.rel_to_idx)

    def _static_features(
        self, ch: GraphChannels, lam: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Type, relation and relevance features; fixed across layers."""
        type_onehot = torch.nn.functional.one_hot(
            ch.node_types, NUM_NODE_TYPES
        ).to(self.dtype)
        rel_onehot = torch.nn.functional.one_hot(ch.rel_ids, self.n_rel).to(
            self.dtype
        )
        v_feat = self.f_v(type_onehot)                          # (N, ntd)
        r_feat = self.f_r(
            torch.cat(
                [
                    type_onehot[ch.senders],
                    type_onehot[ch.receivers],
                    rel_onehot,
                ],
                dim=-1,
            )
        )                                                        # (C, rtd)
        lam_feat = self.f_lam(lam.to(self.dtype).unsqueeze(-1))  # (N, lvd)
        return v_feat, r_feat, lam_feat

    def _attention(
        self,
        h: torch.Tensor,
        v_feat: torch.Tensor,
        lam_feat: torch.Tensor,
        r_feat: torch.Tensor,
        ch: GraphChannels,
        uniform: bool = False,
    ) -> torch.Tensor:
        """Per-channel attention weights, normalised per receiver."""
        n = ch.num_nodes
        if uniform:
            ones = torch.ones(len(ch.keys), dtype=self.dtype)
            counts = torch.zeros(n, dtype=self.dtype).index_add_(
                0, ch.receivers, ones
            )
            return ones / counts[ch.receivers]
        q = self.f_q(torch.cat([h, v_feat, lam_feat], dim=-1))
        k = self.f_k(
            torch.cat(
                [
                    h[ch.receivers],
                    v_feat[ch.receivers],
                    lam_feat[ch.receivers],
                    r_feat,
                ],
                dim=-1,
            )
        )
        scores = (q[ch.senders] * k).sum(dim=-1) / self.cfg.dim**0.5
        smax = torch.full((n,), -torch.inf, dtype=self.dtype).scatter_reduce(
            0, ch.receivers, scores, reduce="amax", include_self=True
        )
        ex = torch.exp(scores - smax[ch.receivers])
        denom = torch.zeros(n, dtype=self.dtype).index_add_(
            0, ch.receivers, ex
        )
        return ex / denom[ch.receivers]

    def forward(
        self,
        ch: GraphChannels,
        h0: torch.Tensor,
        lam: torch.Tensor,
        *,
        uniform_attention: bool = False,
        collect_attention: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor]]:
        """Run all layers; returns (node_states, graph_embedding, alphas).

        h0: (N, dim) initial node features; lam: (N,) relevance scores.
        alphas holds one per-channel weight tensor per layer when
        collect_attention is set.
        """
        if ch.num_nodes == 0:
            raise EmptyGraphError("EMPTY_GRAPH: graph has no nodes")
        v_feat, r_feat, lam_feat = self._static_features(ch, lam)
        h = h0.to(self.dtype)
        alphas: list[torch.Tensor] = []
        for norm in self.norms:
            alpha = self._attention(
                h, v_feat, lam_feat, r_feat, ch, uniform=uniform_attention
            )
            if collect_attention:
                alphas.append(alpha.detach())
            msg = self.f_msg(
                torch.cat([h[ch.senders], v_feat[ch.senders], r_feat], dim=-1)
            )
            agg = torch.zeros_like(h).index_add_(
                0, ch.receivers, alpha.unsqueeze(-1) * msg
            )
            h = norm(self.f_n(agg)) + h
        return h, h.mean(dim=0), alphas

    def encode_graph(
        self,
        graph: EvidenceGraph,
        h0: torch.Tensor,
        lam: torch.Tensor,
        **kw,
    ) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor]]:
        return self.forward(self.channels(graph), h0, lam, **kw)

    def attention_map(
        self, ch: GraphChannels, h: torch.Tensor, lam: torch.Tensor
    ) -> dict[tuple[int, int, str], float]:
        """First-layer attention as {(sender, receiver, relation): weight},
        for inspection and tests."""
        v_feat, r_feat, lam_feat = self._static_features(ch, lam)
        alpha = self._attention(h.to(self.dtype), v_feat, lam_feat, r_feat, ch)
        return {key: float(a) for key, a in zip(ch.keys, alpha.detach())}
