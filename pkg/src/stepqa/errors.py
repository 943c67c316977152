"""Exception hierarchy shared across the package."""

from __future__ import annotations


class StepQAError(Exception):
    """Base class for every error raised by this package."""


# question state
class StateError(StepQAError, ValueError):
    pass


class PendingExists(StateError):
    pass


class NoPending(StateError):
    pass


class EmptyDecomp(StateError):
    pass


class EmptyFact(StateError):
    pass


class IllegalState(StateError):
    pass


# prompt rendering and parsing
class PromptError(StepQAError, ValueError):
    pass


class MissingSlot(PromptError):
    def __init__(self, slot: str):
        super().__init__(slot)
        self.slot = slot

    def __str__(self) -> str:
        return f"missing slot {self.slot!r}"


class UnknownKind(PromptError):
    pass


class ParseError(StepQAError, ValueError):
    pass


class UnparsableChoice(ParseError):
    pass


class NoDecompFound(ParseError):
    pass


class UnparsableVerdict(ParseError):
    pass


# backends
class BackendError(StepQAError):
    pass


class Transport(BackendError):
    """Endpoint unreachable, refused, or timed out."""


class Malformed(BackendError):
    """Response body could not be decoded into the expected shape."""


class ScriptMiss(BackendError):
    def __init__(self, prompt: str, nearest: str | None = None):
        self.prompt = prompt
        self.nearest = nearest
        msg = f"no scripted entry for prompt {prompt[:120]!r}"
        if nearest is not None:
            msg += f"; longest matching script prefix: {nearest!r}"
        super().__init__(msg)


class DimensionMismatch(BackendError, ValueError):
    pass


# retrieval
class RetrievalError(StepQAError):
    pass


class CorpusInvalid(RetrievalError, ValueError):
    pass


class EmptyIndex(RetrievalError):
    pass


class EmbedFailure(RetrievalError):
    pass


class RetrievalEmpty(RetrievalError):
    pass


class ReaderFailure(StepQAError):
    pass


# engine and explorer
class SolveFailed(StepQAError):
    """A solve lineage could not produce a verdict. ``trace`` holds every event up to the failure."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class AllUnparsable(StepQAError):
    pass


class AllLineagesFailed(StepQAError):
    def __init__(self, message: str, tree=None):
        super().__init__(message)
        self.tree = tree


# evaluation kit
class EvalError(StepQAError):
    pass


class FileMissing(EvalError, FileNotFoundError):
    pass


class SchemaViolation(EvalError, ValueError):
    def __init__(self, message: str, qids=()):
        super().__init__(message)
        self.qids = list(qids)


class IncompleteRefinement(EvalError):
    pass


class MissingPrediction(EvalError, KeyError):
    def __init__(self, qids):
        self.qids = list(qids)
        super().__init__(f"missing predictions for {len(self.qids)} qid(s): {self.qids[:10]}")

    def __str__(self) -> str:
        return self.args[0]
