from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepqa.backend import HashEmbedder
from stepqa.errors import CorpusInvalid, DimensionMismatch, EmbedFailure, EmptyIndex, ScriptMiss
from stepqa.backend import ScriptedBackend
from stepqa.retrieval import (
    CorpusIndex,
    DenseIndex,
    RetrievalConfig,
    brute_force_topk,
    build_indexes,
    dump_corpus,
    load_corpus,
    make_doc,
    retrieve,
    retrieve_with_docs,
)


def toy_corpus():
    return [
        make_doc("ming", "Ming dynasty", ["The Ming dynasty ruled China from 1368 to 1644.", "It was followed by the Qing."]),
        make_doc("tang", "Tang dynasty", ["The Tang dynasty lasted from 618 to 907."]),
        make_doc("song", "Song dynasty", ["The Song dynasty began in 960.", "Its capital moved south in 1127.", "It fell in 1279."]),
    ]


def random_corpus(n_docs, n_paras, dim, seed):
    rng = np.random.default_rng(seed)
    docs, table = [], {}
    for d in range(n_docs):
        doc = make_doc(f"d{d:03d}", f"title {d}", [f"doc {d} paragraph {p}" for p in range(n_paras)])
        docs.append(doc)
        table[doc.key_text] = rng.standard_normal(dim)
        for p in doc.paragraphs:
            table[p.text] = rng.standard_normal(dim)
    return docs, table


def test_index_sizes():
    doc_index, para_index = build_indexes(toy_corpus(), HashEmbedder(dim=8))
    assert len(doc_index) == 3 and len(para_index) == 6
    assert doc_index.dim == para_index.dim == 8
    assert doc_index.level == "Document" and para_index.level == "Paragraph"


def test_document_key_is_title_newline_first_paragraph():
    doc = toy_corpus()[0]
    assert doc.key_text == "Ming dynasty\nThe Ming dynasty ruled China from 1368 to 1644."


@pytest.mark.parametrize(
    "corpus",
    [
        [make_doc("a", "A", ["x"]), make_doc("a", "B", ["y"])],
        [make_doc("a", "A", [{"para_id": "p", "text": "x"}]), make_doc("b", "B", [{"para_id": "p", "text": "y"}])],
        [make_doc("a", "A", [])],
        [make_doc("a", "A", [" "])],
        [],
    ],
)
def test_invalid_corpus(corpus):
    with pytest.raises(CorpusInvalid):
        build_indexes(corpus, HashEmbedder(dim=4))


def test_index_is_read_only():
    doc_index, _ = build_indexes(toy_corpus(), HashEmbedder(dim=4))
    with pytest.raises(ValueError):
        doc_index.vectors[0, 0] = 1.0


def test_engineered_nearest_document_is_kept_first():
    corpus = [make_doc(x, x.upper(), [f"{x} text"]) for x in "abc"]
    q = "query"
    pins = {corpus[0].key_text: [0.1, 0, 0], corpus[1].key_text: [0.9, 0, 0], corpus[2].key_text: [0.5, 0, 0], q: [1, 0, 0]}
    e = HashEmbedder(dim=3, overrides=pins)
    doc_index, para_index = build_indexes(corpus, e)
    _, kept = retrieve_with_docs(q, doc_index, para_index, e, RetrievalConfig(k_doc=2, k=5))
    assert kept == ["b", "c"]


def test_xianfeng_paragraphs_dominate():
    # an axis per entity; the query and the Xianfeng document share one
    corpus = [
        make_doc("xianfeng", "Xianfeng Emperor", ["Aisin-Gioro Yizhu reigned as the Xianfeng Emperor.", "He died in 1861 at Chengde."]),
        make_doc("tongzhi", "Tongzhi Emperor", ["The Tongzhi Emperor succeeded his father in 1861."]),
        make_doc("opium", "Second Opium War", ["The war lasted from 1856 to 1860."]),
    ]
    axes = {"xianfeng": 0, "tongzhi": 1, "opium": 2}
    pins = {}
    for doc in corpus:
        v = np.zeros(4)
        v[axes[doc.doc_id]] = 1.0
        pins[doc.key_text] = v
        for i, p in enumerate(doc.paragraphs):
            pins[p.text] = v * (1.0 - 0.1 * i) + np.array([0, 0, 0, 0.05])
    query = "When did Aisin-Gioro Yizhu die?"
    pins[query] = np.array([1.0, 0.2, 0.1, 0.0])
    e = HashEmbedder(dim=4, overrides=pins)
    hits = retrieve(query, *build_indexes(corpus, e), e, RetrievalConfig(k_doc=3, k=3))
    assert [h.doc_id for h in hits[:2]] == ["xianfeng", "xianfeng"]
    assert hits[0].para_id == "xianfeng#0"


def test_k_doc_one_restricts_to_single_document():
    docs, table = random_corpus(20, 4, 6, seed=1)
    e = ScriptedBackend(embeddings=table, embedder=HashEmbedder(dim=6))
    hits = retrieve("anything", *build_indexes(docs, e), e, RetrievalConfig(k_doc=1, k=10))
    assert len(hits) == 4 and len({h.doc_id for h in hits}) == 1


def test_hits_sorted_with_id_tiebreak():
    corpus = [make_doc(d, d, [f"{d} p"]) for d in ("b", "a", "c")]
    e = HashEmbedder(dim=2, overrides={**{doc.key_text: [1, 0] for doc in corpus}, **{f"{d} p": [1, 0] for d in "abc"}, "q": [1, 0]})
    hits = retrieve("q", *build_indexes(corpus, e), e, RetrievalConfig(k_doc=3, k=3))
    assert [h.para_id for h in hits] == ["a#0", "b#0", "c#0"]


def test_empty_index_and_embed_failure():
    empty = DenseIndex("Document", (), np.zeros((0, 3)))
    para = DenseIndex("Paragraph", (), np.zeros((0, 3)), owners=())
    with pytest.raises(EmptyIndex):
        retrieve("q", empty, para, HashEmbedder(dim=3))
    doc_index, para_index = build_indexes(toy_corpus(), HashEmbedder(dim=3))
    with pytest.raises(EmbedFailure):
        retrieve("unscripted", doc_index, para_index, ScriptedBackend(embeddings={"x": [1.0, 0.0, 0.0]}))


# ---------------------------------------------------------------- oracle

def exhaustive_sort(query, entries, k):
    # exactly rounded scores and a full sort: independent of the library path
    scored = [(-math.fsum(float(a) * float(b) for a, b in zip(vec, query)), eid) for eid, vec in entries]
    scored.sort()
    return [(eid, -s) for s, eid in scored[:k]]


def test_brute_force_identity_case():
    basis = [(f"e{i}", np.eye(4)[i]) for i in range(4)]
    assert brute_force_topk(np.eye(4)[2], basis, 1) == [("e2", 1.0)]
    full = brute_force_topk(np.array([0.4, 0.3, 0.2, 0.1]), basis, 10)
    assert [i for i, _ in full] == ["e0", "e1", "e2", "e3"]


def test_brute_force_matches_independent_sort_500():
    rng = np.random.default_rng(500)
    entries = [(f"id{i:04d}", rng.standard_normal(32)) for i in range(500)]
    q = rng.standard_normal(32)
    ours = brute_force_topk(q, entries, 10)
    theirs = exhaustive_sort(q, entries, 10)
    assert [i for i, _ in ours] == [i for i, _ in theirs]
    np.testing.assert_allclose([s for _, s in ours], [s for _, s in theirs], rtol=0, atol=1e-12)


def test_brute_force_dim_mismatch():
    with pytest.raises(DimensionMismatch):
        brute_force_topk(np.ones(3), [("a", np.ones(4))], 1)


def _oracle_restricted(query_vec, para_index, kept_docs, k):
    kept = set(kept_docs)
    entries = [(pid, vec) for pid, vec, owner in zip(para_index.ids, para_index.vectors, para_index.owners) if owner in kept]
    return brute_force_topk(query_vec, entries, k)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 15))
def test_subset_oracle_equivalence(seed, k_doc, k):
    docs, table = random_corpus(12, 3, 5, seed)
    e = ScriptedBackend(embeddings=table, embedder=HashEmbedder(dim=5, seed=seed))
    doc_index, para_index = build_indexes(docs, e)
    query = f"query {seed}"
    hits, kept = retrieve_with_docs(query, doc_index, para_index, e, RetrievalConfig(k_doc=k_doc, k=k))
    qv = e.embed([query])[0]
    assert kept == [i for i, _ in brute_force_topk(qv, doc_index.entries(), k_doc)]
    assert [(h.para_id, h.score) for h in hits] == _oracle_restricted(qv, para_index, kept, k)
    if k_doc >= len(docs):
        assert [(h.para_id, h.score) for h in hits] == brute_force_topk(qv, para_index.entries(), k)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_enlarging_k_only_appends(seed, k_doc):
    docs, table = random_corpus(10, 3, 4, seed)
    e = ScriptedBackend(embeddings=table, embedder=HashEmbedder(dim=4, seed=seed))
    idx = build_indexes(docs, e)
    prev = []
    for k in range(1, 32):
        hits = retrieve("q", *idx, e, RetrievalConfig(k_doc=k_doc, k=k))
        assert hits[: len(prev)] == prev
        prev = hits


def test_retrieval_is_deterministic():
    e = HashEmbedder(dim=8, seed=9)
    a = retrieve("q", *build_indexes(toy_corpus(), e), e, RetrievalConfig(k_doc=2, k=3))
    b = retrieve("q", *build_indexes(toy_corpus(), e), e, RetrievalConfig(k_doc=2, k=3))
    assert a == b


# ---------------------------------------------------------------- persistence

def test_corpus_jsonl_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(dump_corpus(toy_corpus()), encoding="utf-8")
    assert load_corpus(path) == toy_corpus()
    path.write_text(json.dumps({"doc_id": "x", "title": "t", "paragraphs": ["a", "b"]}) + "\n", encoding="utf-8")
    assert [p.para_id for p in load_corpus(path)[0].paragraphs] == ["x#0", "x#1"]
    path.write_text('{"title": "no id"}\n', encoding="utf-8")
    with pytest.raises(CorpusInvalid):
        load_corpus(path)


def test_index_persistence_round_trip(tmp_path):
    e = HashEmbedder(dim=8)
    bundle = CorpusIndex.build(toy_corpus(), e)
    bundle.save(tmp_path / "b.npz")
    back = CorpusIndex.load(tmp_path / "b.npz")
    assert back.corpus == bundle.corpus
    assert back.retrieve("q", e) == bundle.retrieve("q", e)
    bundle.doc_index.save(tmp_path / "d.npz")
    d = DenseIndex.load(tmp_path / "d.npz")
    assert d.ids == bundle.doc_index.ids and np.array_equal(d.vectors, bundle.doc_index.vectors)
    with pytest.raises(ValueError):
        CorpusIndex.load(tmp_path / "d.npz")
