"""Prompt generation: capacity, placement, null padding, the gated MLP."""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gsap.graph import Triplet
from gsap.prompts import HEAD, RELATION, TAIL, PromptGenerator, UnknownRelationError

RELS = ["r1", "r2", "RelatedQA"]


def make_gen(k=6, p=2, include_entities=True, include_relation=True, graph_dim=5,
             prompt_dim=4, hidden_dim=3):
    torch.manual_seed(0)
    return PromptGenerator(
        graph_dim=graph_dim,
        prompt_dim=prompt_dim,
        hidden_dim=hidden_dim,
        relation_vocab=RELS,
        length=k,
        num_layers=p,
        include_entities=include_entities,
        include_relation=include_relation,
    )


def make_triplets(n, n_nodes=8):
    out = []
    for i in range(n):
        out.append(
            Triplet(
                head=i % n_nodes,
                relation=RELS[i % len(RELS)],
                tail=(i + 1) % n_nodes,
                edge_index=i,
                head_surface=f"h{i}",
                tail_surface=f"t{i}",
            )
        )
    return out


def node_states(n_nodes=8, graph_dim=5, seed=7):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(n_nodes, graph_dim, dtype=torch.float64, generator=g)


# capacity


@pytest.mark.parametrize(
    "k,p,ents,rel,expected",
    [
        (6, 2, True, True, 2 * (6 // 3)),
        (6, 2, True, False, 2 * (6 // 2)),
        (6, 2, False, True, 2 * 6),
        (4, 3, True, True, 3 * (4 // 3)),
        (2, 2, True, True, 0),   # a triplet needs 3 slots, none fit
        (6, 0, True, True, 0),
        (6, 2, False, False, 0),
    ],
)
def test_capacity_formula(k, p, ents, rel, expected):
    gen = make_gen(k=k, p=p, include_entities=ents, include_relation=rel)
    assert gen.capacity == expected


# placement


@given(
    k=st.integers(3, 9),
    p=st.integers(1, 4),
    n_triplets=st.integers(0, 30),
)
@settings(max_examples=40, deadline=None)
def test_round_robin_placement_matches_oracle(k, p, n_triplets):
    gen = make_gen(k=k, p=p)
    trips = make_triplets(n_triplets)
    ps = gen.generate(trips, node_states(), torch.zeros(5, dtype=torch.float64))

    # independent slot map: rank r sits on layer r % p starting at
    # slot (r // p) * 3, components in head/relation/tail order
    expected = [[None] * k for _ in range(p)]
    kept = trips[: gen.capacity]
    for rank in range(len(kept)):
        layer, start = rank % p, (rank // p) * 3
        expected[layer][start] = (rank, HEAD)
        expected[layer][start + 1] = (rank, RELATION)
        expected[layer][start + 2] = (rank, TAIL)

    assert ps.slot_roles == expected
    assert ps.triplets == kept
    assert ps.layers.shape == (p, k, 4)


def test_overflow_drops_low_rank_tail():
    gen = make_gen(k=6, p=2)  # capacity 4
    trips = make_triplets(7)
    ps = gen.generate(trips, node_states(), torch.zeros(5, dtype=torch.float64))
    assert ps.triplets == trips[:4]
    ranks = {role[0] for layer in ps.slot_roles for role in layer if role}
    assert ranks == {0, 1, 2, 3}


def test_null_slots_keep_learned_null_vectors():
    gen = make_gen(k=6, p=2)
    trips = make_triplets(1)  # fills 3 slots on layer 0 only
    ps = gen.generate(trips, node_states(), torch.zeros(5, dtype=torch.float64))
    for j in range(2):
        for s in range(6):
            if ps.slot_roles[j][s] is None:
                assert torch.equal(ps.layers[j, s], gen.null_prompts[j, s])
            else:
                assert not torch.equal(ps.layers[j, s], gen.null_prompts[j, s])


def test_generate_without_relation_slots():
    gen = make_gen(k=4, p=1, include_relation=False)  # spt 2, capacity 2
    trips = make_triplets(2)
    ps = gen.generate(trips, node_states(), torch.zeros(5, dtype=torch.float64))
    assert ps.slot_roles[0] == [(0, HEAD), (0, TAIL), (1, HEAD), (1, TAIL)]


# values


def test_filled_slots_match_manual_formula():
    gen = make_gen(k=6, p=2)
    trips = make_triplets(3)
    states = node_states()
    g_vec = torch.randn(5, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    ps = gen.generate(trips, states, g_vec)

    def f(e):
        mixed = e + gen.w_g(g_vec)
        return gen.w_out(torch.relu(gen.w_in(mixed)))

    for j, layer in enumerate(ps.slot_roles):
        for s, role in enumerate(layer):
            if role is None:
                continue
            rank, comp = role
            t = trips[rank]
            if comp == HEAD:
                e = gen.project(states[t.head])
            elif comp == TAIL:
                e = gen.project(states[t.tail])
            else:
                e = gen.project(gen.rel_table.weight[gen.relation_id(t.relation)])
            assert torch.allclose(ps.layers[j, s], f(e), atol=1e-12)


def test_transform_is_the_gated_mlp():
    gen = make_gen()
    e = torch.randn(4, dtype=torch.float64)
    g = torch.randn(5, dtype=torch.float64)
    manual = gen.w_out.weight @ torch.relu(
        gen.w_in.weight @ (e + gen.w_g.weight @ g)
    )
    assert torch.allclose(gen.transform(e, g), manual, atol=1e-12)


def test_unknown_relation_raises():
    gen = make_gen()
    bad = make_triplets(1)
    bad[0] = Triplet(0, "never-seen", 1, 0, "h", "t")
    with pytest.raises(UnknownRelationError, match="UNKNOWN_RELATION"):
        gen.generate(bad, node_states(), torch.zeros(5, dtype=torch.float64))


# degenerate and random sets


def test_zero_layers_is_empty():
    gen = make_gen(p=0)
    ps = gen.generate(make_triplets(2), node_states(), torch.zeros(5, dtype=torch.float64))
    assert ps.is_empty()
    assert ps.num_layers == 0


def test_random_set_ignores_triplets_and_is_seeded():
    gen = make_gen(k=5, p=3)
    a = gen.random_set(torch.Generator().manual_seed(9))
    b = gen.random_set(torch.Generator().manual_seed(9))
    c = gen.random_set(torch.Generator().manual_seed(10))
    assert torch.equal(a.layers, b.layers)
    assert not torch.equal(a.layers, c.layers)
    assert a.layers.shape == (3, 5, 4)
    assert a.triplets == []
    assert all(role is None for layer in a.slot_roles for role in layer)
    assert not torch.equal(a.layers, gen.null_prompts)


def test_generate_is_differentiable_through_node_states():
    gen = make_gen()
    states = node_states().requires_grad_(True)
    g_vec = torch.zeros(5, dtype=torch.float64)
    ps = gen.generate(make_triplets(2), states, g_vec)
    ps.layers.sum().backward()
    assert states.grad is not None
    assert torch.isfinite(states.grad).all()
