"""Independent reference implementations and verification battery.

oracle_dense_gnn re-implements the graph encoder's forward pass in plain
numpy with per-receiver loops; it shares parameter values with the torch
module but no code.  grad_check compares autograd gradients against
central finite differences in double precision on small fixtures.  The
battery behind `gsap verify` bundles these with the analytic loss checks
and a reachability audit of the synthetic generator.
"""

from __future__ import annotations

import math
import random
from typing import Callable

import numpy as np
import torch

from .config import EncoderConfig, GraphConfig
from .data import generate_synthetic
from .encoder import FrozenTransformerEncoder
from .fusion import FusionHead, refreshed_features
from .gnn import RelationalGraphEncoder
from .graph import EvidenceGraph, NodeType, Triplet
from .knowledge import TripleStore, normalize_entity
from .prompts import PromptGenerator
from .trainer import cross_entropy_loss


def bfs_reachable(
    store: TripleStore, src: str, dst: str, max_hops: int
) -> bool:
    """Undirected breadth-first reachability within max_hops edges."""
    src, dst = normalize_entity(src), normalize_entity(dst)
    if src == dst:
        return True
    adj: dict[str, set[str]] = {}
    for t in store.triples:
        adj.setdefault(t.head, set()).add(t.tail)
        adj.setdefault(t.tail, set()).add(t.head)
    frontier = {src}
    seen = {src}
    for _ in range(max_hops):
        nxt: set[str] = set()
        for node in frontier:
            for nb in adj.get(node, ()):
                if nb == dst:
                    return True
                if nb not in seen:
                    seen.add(nb)
                    nxt.add(nb)
        frontier = nxt
    return False


# --------------------------------------------------------------- dense GNN


def _lin(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ W.T + b


def oracle_dense_gnn(
    graph: EvidenceGraph,
    lam: np.ndarray,
    h0: np.ndarray,
    enc: RelationalGraphEncoder,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference forward pass (eval-mode batch norm), numpy throughout.

    Returns (node_states, graph_embedding).  Shares parameter values with
    the module, not code.
    """
    if enc.training:
        raise ValueError("oracle covers eval-mode batch norm only")
    W = {k: v.detach().cpu().double().numpy() for k, v in enc.state_dict().items()}
    n_rel = enc.n_rel
    n = len(graph.nodes)
    d = enc.cfg.dim

    chans: list[tuple[int, int, int]] = []
    for e in graph.edges:
        rid = enc.rel_to_idx[e.relation]
        chans.append((e.head, e.tail, rid))
        chans.append((e.tail, e.head, rid))
    for node in graph.nodes:
        chans.append((node.id, node.id, n_rel - 1))

    eye_t = np.eye(4)
    eye_r = np.eye(n_rel)
    types = np.array([int(node.node_type) for node in graph.nodes])
    v_feat = _lin(W["f_v.weight"], W["f_v.bias"], eye_t[types])
    r_rows = np.stack(
        [
            np.concatenate([eye_t[types[u]], eye_t[types[r]], eye_r[rel]])
            for (u, r, rel) in chans
        ]
    )
    r_feat = _lin(W["f_r.weight"], W["f_r.bias"], r_rows)
    lam_feat = _lin(
        W["f_lam.weight"], W["f_lam.bias"], np.asarray(lam, dtype=float)[:, None]
    )

    by_receiver: dict[int, list[int]] = {i: [] for i in range(n)}
    for ci, (_, recv, _) in enumerate(chans):
        by_receiver[recv].append(ci)

    h = np.array(h0, dtype=float)
    for layer in range(enc.cfg.num_layers):
        q = _lin(
            W["f_q.weight"], W["f_q.bias"],
            np.concatenate([h, v_feat, lam_feat], axis=1),
        )
        scores = np.empty(len(chans))
        msgs = np.empty((len(chans), d))
        for ci, (u, recv, _) in enumerate(chans):
            k_in = np.concatenate(
                [h[recv], v_feat[recv], lam_feat[recv], r_feat[ci]]
            )
            k_vec = W["f_k.weight"] @ k_in + W["f_k.bias"]
            scores[ci] = float(q[u] @ k_vec) / math.sqrt(d)
            m_in = np.concatenate([h[u], v_feat[u], r_feat[ci]])
            msgs[ci] = W["f_msg.weight"] @ m_in + W["f_msg.bias"]

        agg = np.zeros((n, d))
        for recv, idxs in by_receiver.items():
            s = scores[idxs]
            e = np.exp(s - s.max())
            alpha = e / e.sum()
            agg[recv] = (alpha[:, None] * msgs[idxs]).sum(axis=0)

        z = _lin(W["f_n.weight"], W["f_n.bias"], agg)
        rm = W[f"norms.{layer}.running_mean"]
        rv = W[f"norms.{layer}.running_var"]
        gamma = W[f"norms.{layer}.weight"]
        beta = W[f"norms.{layer}.bias"]
        z = (z - rm) / np.sqrt(rv + enc.norms[layer].eps) * gamma + beta
        h = z + h
    return h, h.mean(axis=0)


def random_graph(
    rng: random.Random,
    relation_vocab: list[str],
    max_nodes: int = 10,
    parallel_edges: bool = True,
) -> EvidenceGraph:
    """A small random evidence graph with mixed node types; always has at
    least one question and one choice entity and may carry parallel edges."""
    n = rng.randint(2, max_nodes)
    g = EvidenceGraph(question="probe")
    g.add_node("q0", NodeType.QUESTION_ENTITY)
    g.add_node("c0", NodeType.CHOICE_ENTITY)
    for i in range(2, n):
        g.add_node(
            f"n{i}",
            rng.choice(
                [
                    NodeType.QUESTION_ENTITY,
                    NodeType.CHOICE_ENTITY,
                    NodeType.OTHER_ENTITY,
                    NodeType.PARAPHRASE_ENTITY,
                ]
            ),
        )
    for node in g.nodes:
        node.relevance = rng.uniform(0.01, 0.99)
    n_edges = rng.randint(1, max(1, 2 * n))
    for _ in range(n_edges):
        a, b = rng.sample(range(n), 2) if n > 1 else (0, 0)
        if a == b:
            continue
        rel = rng.choice(relation_vocab)
        g.add_edge(a, b, rel)
        if parallel_edges and len(relation_vocab) > 1 and rng.random() < 0.2:
            other = rng.choice([r for r in relation_vocab if r != rel])
            g.add_edge(a, b, other)
    return g


def perturb_norm_stats(enc: RelationalGraphEncoder, rng: random.Random) -> None:
    """Give the batch norms non-trivial running statistics."""
    with torch.no_grad():
        for norm in enc.norms:
            norm.running_mean.copy_(
                torch.tensor(
                    [rng.gauss(0, 0.2) for _ in range(norm.running_mean.numel())],
                    dtype=norm.running_mean.dtype,
                )
            )
            norm.running_var.copy_(
                torch.tensor(
                    [rng.uniform(0.5, 1.5) for _ in range(norm.running_var.numel())],
                    dtype=norm.running_var.dtype,
                )
            )


# ------------------------------------------------------------- grad checks


def finite_difference_max_rel_err(
    params: list[torch.nn.Parameter],
    loss_fn: Callable[[], torch.Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between autograd and central differences."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            gflat = (
                torch.zeros_like(p) if g is None else g
            ).reshape(-1)
            flat = p.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                lp = float(loss_fn())
                flat[i] = orig - eps
                lm = float(loss_fn())
                flat[i] = orig
                num = (lp - lm) / (2 * eps)
                a = float(gflat[i])
                rel = abs(a - num) / max(abs(a) + abs(num), 1e-4)
                worst = max(worst, rel)
    return worst


_TEST_RELATIONS = ["DefTop", "RelatedQA", "r1", "r2"]


def _tiny_graph_setup(seed: int):
    rng = random.Random(seed)
    cfg = GraphConfig(
        dim=6, num_layers=2, node_type_dim=3, rel_type_dim=3, relevance_dim=2
    )
    enc = RelationalGraphEncoder(cfg, _TEST_RELATIONS)
    enc.eval()
    perturb_norm_stats(enc, rng)
    g = random_graph(rng, _TEST_RELATIONS, max_nodes=8)
    gen = torch.Generator().manual_seed(seed)
    n = len(g.nodes)
    h0 = torch.randn(n, cfg.dim, dtype=torch.float64, generator=gen)
    lam = torch.rand(n, dtype=torch.float64, generator=gen)
    return enc, g, h0, lam, gen


def grad_check_graph_encoder(eps: float = 1e-5, seed: int = 0) -> float:
    enc, g, h0, lam, gen = _tiny_graph_setup(seed)
    ch = enc.channels(g)
    w1 = torch.randn(h0.shape, dtype=torch.float64, generator=gen)
    w2 = torch.randn(h0.shape[1], dtype=torch.float64, generator=gen)

    def loss_fn() -> torch.Tensor:
        states, g_vec, _ = enc(ch, h0, lam)
        return (states * w1).sum() + (g_vec * w2).sum()

    return finite_difference_max_rel_err(list(enc.parameters()), loss_fn, eps)


def _tiny_triplets(rng: random.Random, n_nodes: int, count: int) -> list[Triplet]:
    out = []
    for i in range(count):
        h, t = rng.sample(range(n_nodes), 2)
        out.append(
            Triplet(
                head=h,
                relation=rng.choice(_TEST_RELATIONS[:3]),
                tail=t,
                edge_index=i,
                head_surface=f"n{h}",
                tail_surface=f"n{t}",
            )
        )
    return out


def grad_check_prompt(eps: float = 1e-5, seed: int = 0) -> float:
    rng = random.Random(seed)
    enc_cfg = EncoderConfig(
        hidden_size=16, num_layers=2, num_heads=2, ff_size=32,
        max_len=64, vocab_size=29, init_seed=seed + 7,
    )
    enc = FrozenTransformerEncoder(enc_cfg)
    gen = PromptGenerator(
        graph_dim=6, prompt_dim=16, hidden_dim=12,
        relation_vocab=_TEST_RELATIONS, length=6, num_layers=2,
    )
    tgen = torch.Generator().manual_seed(seed)
    node_states = torch.randn(5, 6, dtype=torch.float64, generator=tgen)
    g_vec = torch.randn(6, dtype=torch.float64, generator=tgen)
    trips = _tiny_triplets(rng, 5, 5)
    ids = [2] + [rng.randrange(4, 29) for _ in range(8)] + [3]
    w_final = torch.randn(len(ids) + 6, 16, dtype=torch.float64, generator=tgen)
    w_caps = {
        j: torch.randn(6, 16, dtype=torch.float64, generator=tgen)
        for j in (1, 2)
    }

    def loss_fn() -> torch.Tensor:
        ps = gen.generate(trips, node_states, g_vec)
        out = enc.encode(ids, ps)
        loss = (out.states * w_final).sum()
        for j, w in w_caps.items():
            loss = loss + (out.captures[j] * w).sum()
        return loss

    return finite_difference_max_rel_err(list(gen.parameters()), loss_fn, eps)


def grad_check_fusion(eps: float = 1e-5, seed: int = 0) -> float:
    enc, g, h0, lam, tgen = _tiny_graph_setup(seed + 13)
    ch = enc.channels(g)
    head = FusionHead(text_dim=10, graph_dim=6, dim=8)
    rng = random.Random(seed + 5)
    trips = _tiny_triplets(rng, len(g.nodes), 2)
    outs = {
        0: {
            "head": torch.randn(10, dtype=torch.float64, generator=tgen),
            "tail": torch.randn(10, dtype=torch.float64, generator=tgen),
        },
        1: {"head": torch.randn(10, dtype=torch.float64, generator=tgen)},
    }
    t_q = torch.randn(10, dtype=torch.float64, generator=tgen)
    t_c = torch.randn(10, dtype=torch.float64, generator=tgen)
    t_k = torch.randn(10, dtype=torch.float64, generator=tgen)

    def loss_fn() -> torch.Tensor:
        h0_r = refreshed_features(h0, trips, outs, head.back_proj)
        _, g2, _ = enc(ch, h0_r, lam)
        z, _ = head.fuse(t_q, t_c, t_k, g2)
        return z

    return finite_difference_max_rel_err(list(head.parameters()), loss_fn, eps)


def grad_check(component: str, eps: float = 1e-5, seed: int = 0) -> float:
    """Dispatch by component name; returns the max relative error."""
    table = {
        "graph-encoder": grad_check_graph_encoder,
        "prompt": grad_check_prompt,
        "fusion": grad_check_fusion,
        "hmpr": grad_check_fusion,
    }
    if component not in table:
        raise ValueError(f"unknown component {component!r}")
    return table[component](eps=eps, seed=seed)


# ----------------------------------------------------------------- battery


def verify_all(quick: bool = False) -> list[dict]:
    """Run every oracle; returns [{name, ok, detail}, ...]."""
    results: list[dict] = []

    def record(name: str, ok: bool, detail: str) -> None:
        results.append({"name": name, "ok": bool(ok), "detail": detail})

    rng = random.Random(1234)
    cfg = GraphConfig(
        dim=8, num_layers=3, node_type_dim=4, rel_type_dim=4, relevance_dim=2
    )
    enc = RelationalGraphEncoder(cfg, _TEST_RELATIONS)
    enc.eval()
    perturb_norm_stats(enc, rng)
    n_graphs = 10 if quick else 50
    worst = 0.0
    worst_rows = 0.0
    for _ in range(n_graphs):
        g = random_graph(rng, _TEST_RELATIONS, max_nodes=10)
        n = len(g.nodes)
        gen = torch.Generator().manual_seed(rng.randrange(2**31))
        h0 = torch.randn(n, cfg.dim, dtype=torch.float64, generator=gen)
        lam = torch.rand(n, dtype=torch.float64, generator=gen)
        with torch.no_grad():
            states, g_vec, alphas = enc(
                enc.channels(g), h0, lam, collect_attention=True
            )
        o_states, o_g = oracle_dense_gnn(g, lam.numpy(), h0.numpy(), enc)
        worst = max(
            worst,
            float(np.abs(states.numpy() - o_states).max()),
            float(np.abs(g_vec.numpy() - o_g).max()),
        )
        ch = enc.channels(g)
        for alpha in alphas:
            sums = torch.zeros(n, dtype=torch.float64).index_add_(
                0, ch.receivers, alpha
            )
            worst_rows = max(worst_rows, float((sums - 1).abs().max()))
    record("dense-gnn-equivalence", worst < 1e-6, f"max abs diff {worst:.3e}")
    record(
        "attention-normalisation", worst_rows < 1e-6,
        f"max |sum-1| {worst_rows:.3e}",
    )

    for name in ("graph-encoder", "prompt", "fusion"):
        err = grad_check(name, seed=0)
        record(f"grad-{name}", err < 1e-4, f"max rel err {err:.3e}")

    uniform = torch.zeros(5, dtype=torch.float64)
    lval = float(cross_entropy_loss(uniform, 2))
    ok = abs(lval - math.log(5)) < 1e-9
    shift = float(cross_entropy_loss(uniform + 123.4, 2))
    ok = ok and abs(shift - lval) < 1e-9
    record("loss-analytics", ok, f"ln5 diff {abs(lval - math.log(5)):.1e}")

    train, dev, store, _ = generate_synthetic(seed=7, n=6, b=3, n_dev=4)
    audit_ok = True
    for inst in train + dev:
        src = inst.question  # source name is the only store entity in it
        srcs = [w for w in src.split() if w in store.entity_index]
        gold = inst.choices[inst.answer]
        audit_ok = audit_ok and len(srcs) == 1
        audit_ok = audit_ok and bfs_reachable(store, srcs[0], gold, 2)
        for i, c in enumerate(inst.choices):
            if i != inst.answer:
                audit_ok = audit_ok and not bfs_reachable(store, srcs[0], c, 2)
    record("synthetic-reachability", audit_ok, "gold 2-hop, distractors not")
    return results
