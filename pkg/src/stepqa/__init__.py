"""Open-domain yes/no question answering by iterative decomposition.

A core generator chooses between answering now and adding a decomposition
question; each decomposition is resolved by two-stage dense retrieval plus a
fused reader, or by the generator itself. Optional strategy exploration
branches over several decompositions and majority-votes the leaves.
"""

from __future__ import annotations

from .backend import (
    Backend,
    CallableBackend,
    Completion,
    GenParams,
    HashEmbedder,
    RecordingBackend,
    RemoteBackend,
    ScriptedBackend,
    backend_from_spec,
)
from .engine import Deps, EngineConfig, RunMode, solve, solve_state
from .estimator import StepwiseQAClassifier, TwoStageRetriever
from .explorer import ExploreConfig, StrategyTree, explore, majority_vote
from .qstate import (
    ActionCode,
    DecompStep,
    Question,
    QuestionState,
    StepStatus,
    Trace,
    TraceEvent,
    Verdict,
    initial_state,
    render_state,
)
from .retrieval import CorpusDoc, CorpusIndex, Paragraph, RetrievalConfig, RetrievalHit, make_doc, retrieve

__version__ = "0.1.0"

__all__ = [
    "ActionCode",
    "Backend",
    "CallableBackend",
    "Completion",
    "CorpusDoc",
    "CorpusIndex",
    "DecompStep",
    "Deps",
    "EngineConfig",
    "ExploreConfig",
    "GenParams",
    "HashEmbedder",
    "Paragraph",
    "Question",
    "QuestionState",
    "RecordingBackend",
    "RemoteBackend",
    "RetrievalConfig",
    "RetrievalHit",
    "RunMode",
    "ScriptedBackend",
    "StepStatus",
    "StepwiseQAClassifier",
    "StrategyTree",
    "Trace",
    "TraceEvent",
    "TwoStageRetriever",
    "Verdict",
    "backend_from_spec",
    "explore",
    "initial_state",
    "make_doc",
    "majority_vote",
    "render_state",
    "retrieve",
    "solve",
    "solve_state",
]
