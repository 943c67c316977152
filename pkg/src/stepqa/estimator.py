"""scikit-learn style wrappers.

``TwoStageRetriever`` fits dense indexes on a corpus and answers
nearest-paragraph queries. ``StepwiseQAClassifier`` fits the same indexes and
predicts yes/no answers with the action loop, so it can be scored and
cross-validated like any classifier.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .engine import Deps, EngineConfig, RunMode, solve_state
from .errors import StepQAError
from .explorer import ExploreConfig, explore
from .qstate import zero_clock
from .retrieval import CorpusIndex, RetrievalConfig
from .utils.validation import check_corpus, check_non_negative_int, check_positive_int, check_questions


class TwoStageRetriever(BaseEstimator):
    """Nested document-then-paragraph dense search.

    Parameters
    ----------
    embedder : object with ``embed(texts) -> ndarray``
    k : int, default=10
        Paragraphs returned per query.
    k_doc : int, default=100
        Documents kept by the first stage.
    """

    def __init__(self, embedder=None, k=10, k_doc=100):
        self.embedder = embedder
        self.k = k
        self.k_doc = k_doc

    def _config(self) -> RetrievalConfig:
        return RetrievalConfig(k_doc=check_positive_int(self.k_doc, "k_doc"), k=check_positive_int(self.k, "k"))

    def fit(self, X, y=None):
        if self.embedder is None:
            raise ValueError("an embedder is required")
        self._config()
        self.index_ = CorpusIndex.build(check_corpus(X), self.embedder)
        self.n_documents_ = len(self.index_.doc_index)
        self.n_paragraphs_ = len(self.index_.para_index)
        return self

    def kneighbors(self, queries, k=None):
        """Return ``(para_ids, scores)`` arrays of shape (n_queries, k')."""
        check_is_fitted(self, "index_")
        if isinstance(queries, str):
            queries = [queries]
        cfg = self._config() if k is None else RetrievalConfig(k_doc=self._config().k_doc, k=check_positive_int(k, "k"))
        hits = [self.index_.retrieve(q, self.embedder, cfg) for q in queries]
        width = max((len(h) for h in hits), default=0)
        ids = np.full((len(hits), width), "", dtype=object)
        scores = np.full((len(hits), width), -np.inf)
        for i, row in enumerate(hits):
            for j, h in enumerate(row):
                ids[i, j], scores[i, j] = h.para_id, h.score
        return ids, scores

    def predict(self, queries):
        return self.kneighbors(queries)[0]


class StepwiseQAClassifier(ClassifierMixin, BaseEstimator):
    """Yes/no question answering by iterative decomposition and retrieval.

    ``fit`` only builds the retrieval indexes from a corpus (the models live
    behind the backends); ``y`` is ignored. ``predict`` returns booleans.
    Failed solves predict ``fallback`` and are listed in ``failures_``.
    """

    def __init__(
        self,
        core=None,
        reader=None,
        embedder=None,
        mode="dere",
        max_rounds=8,
        k=10,
        k_doc=100,
        n=4,
        leaf_cap=16,
        branch_depth=2,
        fallback=False,
        deterministic_trace=False,
    ):
        self.core = core
        self.reader = reader
        self.embedder = embedder
        self.mode = mode
        self.max_rounds = max_rounds
        self.k = k
        self.k_doc = k_doc
        self.n = n
        self.leaf_cap = leaf_cap
        self.branch_depth = branch_depth
        self.fallback = fallback
        self.deterministic_trace = deterministic_trace

    def _engine_config(self) -> EngineConfig:
        return EngineConfig(
            max_rounds=check_positive_int(self.max_rounds, "max_rounds"),
            retrieval=RetrievalConfig(k_doc=check_positive_int(self.k_doc, "k_doc"), k=check_positive_int(self.k, "k")),
            mode=RunMode(self.mode),
        )

    def fit(self, X=None, y=None):
        if self.core is None:
            raise ValueError("a core backend is required")
        cfg = self._engine_config()
        if cfg.mode is RunMode.FULL:
            ExploreConfig(
                n=check_positive_int(self.n, "n"),
                leaf_cap=check_positive_int(self.leaf_cap, "leaf_cap"),
                branch_depth=check_non_negative_int(self.branch_depth, "branch_depth"),
            )
        embedder = self.embedder if self.embedder is not None else self.core
        self.index_ = None
        if X is not None and cfg.mode.allows_retrieval:
            self.index_ = CorpusIndex.build(check_corpus(X), embedder)
        self.classes_ = np.array([False, True])
        return self

    def _deps(self) -> Deps:
        return Deps(core=self.core, reader=self.reader, embedder=self.embedder, index=self.index_)

    def solve_all(self, X):
        """Run every question; returns a list of (question, state or None, trace or tree)."""
        check_is_fitted(self, "classes_")
        cfg = self._engine_config()
        deps = self._deps()
        clock_kw = {"clock": zero_clock} if self.deterministic_trace else {}
        out = []
        self.failures_ = []
        for q in check_questions(X):
            try:
                if cfg.mode is RunMode.FULL:
                    xcfg = ExploreConfig(n=self.n, leaf_cap=self.leaf_cap, branch_depth=self.branch_depth)
                    verdict, tree = explore(q, deps, cfg, xcfg, **clock_kw)
                    best = next(leaf for leaf in tree.leaves if leaf.ok and leaf.verdict == verdict)
                    out.append((q, best.state, tree))
                else:
                    state, trace = solve_state(q, deps, cfg, **clock_kw)
                    out.append((q, state, trace))
            except StepQAError as exc:
                self.failures_.append((q.id, exc))
                out.append((q, None, getattr(exc, "trace", None) or getattr(exc, "tree", None)))
        return out

    def predict(self, X):
        return np.array(
            [bool(self.fallback) if state is None else state.verdict.as_bool for _, state, _ in self.solve_all(X)],
            dtype=bool,
        )
