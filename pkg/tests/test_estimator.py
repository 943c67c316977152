from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stepqa.backend import HashEmbedder
from stepqa.estimator import StepwiseQAClassifier, TwoStageRetriever
from stepqa.retrieval import RetrievalConfig, build_indexes, load_corpus, make_doc, retrieve

from helpers import FIXTURES, FOLIO_QUESTION, RuleCore, folio_backend

CORPUS = [{"doc_id": f"d{i}", "title": f"T{i}", "paragraphs": [f"text {i} a", f"text {i} b"]} for i in range(5)]


def test_retriever_params_and_clone():
    r = TwoStageRetriever(embedder=HashEmbedder(dim=4), k=3, k_doc=2)
    assert r.get_params()["k"] == 3
    c = clone(r)
    assert c.get_params()["k_doc"] == 2 and not hasattr(c, "index_")


def test_retriever_matches_functional_api():
    e = HashEmbedder(dim=8, seed=1)
    r = TwoStageRetriever(embedder=e, k=3, k_doc=2).fit(CORPUS)
    ids, scores = r.kneighbors(["q1", "q2"])
    docs = [make_doc(d["doc_id"], d["title"], d["paragraphs"]) for d in CORPUS]
    hits = retrieve("q1", *build_indexes(docs, e), e, RetrievalConfig(k_doc=2, k=3))
    assert list(ids[0]) == [h.para_id for h in hits]
    np.testing.assert_array_equal(scores[0], [h.score for h in hits])
    assert r.n_documents_ == 5 and r.n_paragraphs_ == 10
    assert list(r.predict("q1")[0]) == list(ids[0])


def test_retriever_validation():
    with pytest.raises(NotFittedError):
        TwoStageRetriever(embedder=HashEmbedder()).kneighbors(["q"])
    with pytest.raises(ValueError):
        TwoStageRetriever(embedder=HashEmbedder(), k=0).fit(CORPUS)
    with pytest.raises(ValueError):
        TwoStageRetriever().fit(CORPUS)


def test_classifier_predicts_and_scores():
    core = RuleCore(rounds=1, decide=lambda path: "yes").backend()
    clf = StepwiseQAClassifier(core=core, mode="de").fit()
    assert clf.predict(["Is it?", "Is that?"]).tolist() == [True, True]
    assert clf.score(["Is it?", "Is that?"], [True, False]) == 0.5
    assert clf.get_params()["mode"] == "de"


def test_classifier_full_mode_and_failures():
    core = RuleCore(rounds=2, decide=lambda path: "no").backend()
    clf = StepwiseQAClassifier(core=core, mode="full", n=2, fallback=True).fit()
    assert clf.predict(["Q?"]).tolist() == [False]
    bad = StepwiseQAClassifier(core=RuleCore(decide=lambda p: "unsure").backend(), mode="dere", fallback=True).fit()
    assert bad.predict(["Q?"]).tolist() == [True]
    assert bad.failures_[0][0] == "q0"


def test_classifier_builds_index_from_corpus():
    core = folio_backend()
    clf = StepwiseQAClassifier(core=core, deterministic_trace=True).fit(load_corpus(FIXTURES / "folio_corpus.jsonl"))
    assert clf.predict([{"qid": "folio", "question": FOLIO_QUESTION}]).tolist() == [False]


def test_classifier_rejects_bad_params():
    with pytest.raises(ValueError):
        StepwiseQAClassifier(core=RuleCore().backend(), max_rounds=0).fit()
    with pytest.raises(ValueError):
        StepwiseQAClassifier(core=RuleCore().backend(), mode="bogus").fit()
    with pytest.raises(ValueError):
        StepwiseQAClassifier().fit()
