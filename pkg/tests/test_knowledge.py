"""Knowledge store loading, normalisation, path queries and retrieval."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsap.knowledge import (
    DEF_TOP,
    RELATED_QA,
    EvidenceCorpus,
    StoreFormatError,
    TripleStore,
    load_corpus,
    load_paraphrases,
    load_triples,
    normalize_entity,
    query_paths,
    retrieve_evidence,
)


# ------------------------------------------------------------- normalisation


def test_normalize_entity_folds_case_underscores_and_spaces():
    assert normalize_entity("Ice_Cream") == "ice cream"
    assert normalize_entity("  Hot   Dog ") == "hot dog"
    assert normalize_entity("HOUSE") == "house"


@given(st.text(max_size=30))
def test_normalize_entity_is_idempotent(s):
    once = normalize_entity(s)
    assert normalize_entity(once) == once


# ------------------------------------------------------------- triple store


def test_store_deduplicates_after_normalisation():
    store = TripleStore()
    store.add("Ice_Cream", "madeof", "milk")
    store.add("ice cream", "madeof", "Milk")
    assert len(store) == 1


def test_store_rejects_empty_fields():
    store = TripleStore()
    with pytest.raises(ValueError):
        store.add("", "rel", "x")
    with pytest.raises(ValueError):
        store.add("a", "  ", "x")


def test_relation_vocab_keeps_reserved_labels_first():
    store = TripleStore()
    store.add("a", "zrel", "b")
    store.add("b", "arel", "c")
    assert store.relation_vocab[:2] == [DEF_TOP, RELATED_QA]
    # then first-seen order, not alphabetical
    assert store.relation_vocab[2:] == ["zrel", "arel"]


def test_entity_index_and_contains(tiny_store):
    assert "stove" in tiny_store
    assert "Stove" in tiny_store
    assert "spoon" not in tiny_store
    rels = {t.relation for t in tiny_store.triples_at("stove")}
    assert rels == {"atlocation", "partof"}


def test_store_rebuilds_indexes_from_given_triples():
    from gsap.knowledge import Triple

    store = TripleStore(triples=[Triple("A_b", "r", "c"), Triple("a b", "r", "c")])
    assert len(store) == 1
    assert "a b" in store


# ------------------------------------------------------------- file loading


def test_load_triples_skips_comments_and_blank_lines(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# header\n\nstove\tatlocation\tkitchen\n")
    store = load_triples(str(p))
    assert len(store) == 1


def test_load_triples_reports_file_and_line_on_bad_row(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\tr\tb\nbad line without tabs\n")
    with pytest.raises(StoreFormatError) as err:
        load_triples(str(p))
    assert "t.tsv:2" in str(err.value)


def test_load_triples_rejects_empty_field(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\t\tb\n")
    with pytest.raises(StoreFormatError):
        load_triples(str(p))


def test_load_paraphrases_later_duplicate_wins(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("Stove\tfirst definition\nstove\tsecond definition\n")
    para = load_paraphrases(str(p))
    assert len(para) == 1
    assert para.get("STOVE") == "second definition"


def test_load_corpus_skips_blanks(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("one sentence\n\n  \nanother sentence\n")
    corpus = load_corpus(str(p))
    assert corpus.sentences == ["one sentence", "another sentence"]


# --------------------------------------------------------------- path query


def test_query_paths_chain(tiny_store):
    paths = query_paths(tiny_store, {"stove"}, max_hops=2, max_paths=100)
    walks = {
        tuple((h.source, h.triple.relation, h.target) for h in p) for p in paths
    }
    # one-hop walks out of stove
    assert (("stove", "atlocation", "kitchen"),) in walks
    assert (("stove", "partof", "pan"),) in walks
    # two-hop continuation through kitchen, walked against storage order too
    assert (
        ("stove", "atlocation", "kitchen"),
        ("kitchen", "partof", "house"),
    ) in walks
    assert (
        ("stove", "partof", "pan"),
        ("pan", "usedfor", "cooking"),
    ) in walks


def test_query_paths_walks_against_stored_orientation():
    store = TripleStore()
    store.add("kitchen", "contains", "stove")  # stored head is the far end
    paths = query_paths(store, {"stove"}, max_hops=1)
    assert len(paths) == 1
    hop = paths[0][0]
    assert hop.source == "stove" and hop.target == "kitchen"
    assert hop.triple.head == "kitchen"


def test_query_paths_requires_positive_hops_and_known_topics(tiny_store):
    assert query_paths(tiny_store, {"stove"}, max_hops=0) == []
    assert query_paths(tiny_store, {"unseen"}, max_hops=2) == []


def test_query_paths_are_simple():
    store = TripleStore()
    store.add("a", "r", "b")
    store.add("b", "r", "a")  # a 2-cycle
    paths = query_paths(store, {"a"}, max_hops=3)
    for p in paths:
        seen = [p[0].source] + [h.target for h in p]
        assert len(seen) == len(set(seen))


def test_query_paths_independent_of_insertion_order():
    rows = [
        ("a", "r1", "b"),
        ("b", "r2", "c"),
        ("a", "r3", "d"),
        ("d", "r4", "c"),
        ("c", "r5", "e"),
    ]
    rng = random.Random(3)
    keys = None
    for _ in range(5):
        rng.shuffle(rows)
        store = TripleStore()
        for h, r, t in rows:
            store.add(h, r, t)
        paths = query_paths(store, {"a"}, max_hops=2, max_paths=4)
        got = [
            tuple((h.source, h.triple.relation, h.target) for h in p)
            for p in paths
        ]
        if keys is None:
            keys = got
        assert got == keys


def test_query_paths_truncates_to_max_paths(tiny_store):
    all_paths = query_paths(tiny_store, {"stove"}, max_hops=2, max_paths=100)
    some = query_paths(tiny_store, {"stove"}, max_hops=2, max_paths=2)
    assert len(some) == 2
    assert some == all_paths[:2]


# ---------------------------------------------------------------- retrieval


def test_retrieve_evidence_ranks_by_overlap(tiny_corpus):
    got = retrieve_evidence(tiny_corpus, "where is the stove in the kitchen", 2)
    assert got[0] == "the stove sits in the kitchen"
    assert len(got) == 2


def test_retrieve_evidence_ties_keep_corpus_order():
    corpus = EvidenceCorpus(["b b", "a a", "c c"])
    got = retrieve_evidence(corpus, "nothing overlaps", 3)
    assert got == ["b b", "a a", "c c"]


def test_retrieve_evidence_edge_cases(tiny_corpus):
    assert retrieve_evidence(EvidenceCorpus(), "q", 5) == []
    assert retrieve_evidence(tiny_corpus, "q", 0) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_retrieve_evidence_is_a_prefix_of_the_full_ranking(seed, k):
    rng = random.Random(seed)
    words = ["ant", "bee", "cow", "dog", "elk"]
    sents = [
        " ".join(rng.choice(words) for _ in range(rng.randint(1, 4)))
        for _ in range(6)
    ]
    corpus = EvidenceCorpus(sents)
    q = " ".join(rng.choice(words) for _ in range(3))
    full = retrieve_evidence(corpus, q, len(sents))
    assert retrieve_evidence(corpus, q, k) == full[:k]
