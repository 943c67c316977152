"""Question state, solving trace, and the textual rendering fed into prompts.

States are immutable values. Every operation returns a new state, so strategy
exploration can fork lineages without copying defensively.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Iterator, Optional

from .errors import EmptyDecomp, EmptyFact, IllegalState, NoPending, PendingExists


@dataclass(frozen=True)
class Question:
    id: str
    text: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("question text must be non-empty")


class StepStatus(str, enum.Enum):
    PENDING = "Pending"
    RETRIEVED = "Retrieved"
    SELF_ANSWERED = "SelfAnswered"


@dataclass(frozen=True)
class DecompStep:
    index: int
    question_text: str
    pseudo_answer: Optional[str] = None
    fact: Optional[str] = None
    status: StepStatus = StepStatus.PENDING
    paragraph_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.index < 1:
            raise IllegalState(f"step index must be positive, got {self.index}")
        if not self.question_text.strip():
            raise EmptyDecomp("decomposition text is blank")
        if self.status is StepStatus.PENDING:
            if self.fact is not None:
                raise IllegalState("pending step cannot carry a fact")
            if self.paragraph_ids:
                raise IllegalState("pending step cannot carry paragraph ids")
        else:
            if self.fact is None or not self.fact.strip():
                raise EmptyFact("resolved step needs a non-empty fact")
            if self.status is StepStatus.RETRIEVED and not self.paragraph_ids:
                raise IllegalState("retrieved step needs at least one paragraph id")
            if self.status is StepStatus.SELF_ANSWERED and self.paragraph_ids:
                raise IllegalState("self-answered step cannot carry paragraph ids")

    @property
    def pending(self) -> bool:
        return self.status is StepStatus.PENDING


class ActionCode(str, enum.Enum):
    FINAL_ANSWER = "FinalAnswer"
    ADD_DECOMP = "AddDecomp"
    RETRIEVE_EXTRACT = "RetrieveExtract"
    SELF_ANSWER = "SelfAnswer"


@dataclass(frozen=True)
class Verdict:
    answer: str
    rationale: str = ""

    def __post_init__(self):
        if self.answer not in ("yes", "no"):
            raise ValueError(f"verdict answer must be 'yes' or 'no', got {self.answer!r}")

    @property
    def as_bool(self) -> bool:
        return self.answer == "yes"


@dataclass(frozen=True)
class QuestionState:
    question: Question
    steps: tuple[DecompStep, ...] = ()
    verdict: Optional[Verdict] = None

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        for pos, s in enumerate(steps, start=1):
            if s.index != pos:
                raise IllegalState(f"step indices must be 1..n in order; found {s.index} at {pos}")
        pend = [s.index for s in steps if s.pending]
        if len(pend) > 1:
            raise IllegalState("at most one pending step is allowed")
        if pend and pend[0] != len(steps):
            raise IllegalState("a pending step must be the last step")
        if self.verdict is not None and pend:
            raise IllegalState("a verdict cannot coexist with a pending step")

    @property
    def pending_step(self) -> Optional[DecompStep]:
        if self.steps and self.steps[-1].pending:
            return self.steps[-1]
        return None

    def legal_actions(self) -> frozenset[ActionCode]:
        if self.verdict is not None:
            return frozenset()
        if self.pending_step is not None:
            return frozenset({ActionCode.RETRIEVE_EXTRACT, ActionCode.SELF_ANSWER})
        return frozenset({ActionCode.FINAL_ANSWER, ActionCode.ADD_DECOMP})


def initial_state(question: Question | str, qid: str = "q") -> QuestionState:
    if isinstance(question, str):
        question = Question(id=qid, text=question)
    return QuestionState(question=question)


def append_decomp(state: QuestionState, d_text: str, pseudo: Optional[str] = None) -> QuestionState:
    if state.pending_step is not None:
        raise PendingExists(f"step {state.pending_step.index} is still pending")
    if state.verdict is not None:
        raise IllegalState("state already carries a verdict")
    if not d_text or not d_text.strip():
        raise EmptyDecomp("decomposition text is blank")
    step = DecompStep(index=len(state.steps) + 1, question_text=d_text, pseudo_answer=pseudo)
    return replace(state, steps=state.steps + (step,))


def resolve_step(
    state: QuestionState,
    fact: str,
    status: StepStatus,
    paragraph_ids: Iterable[str] = (),
    max_paragraphs: Optional[int] = None,
) -> QuestionState:
    last = state.pending_step
    if last is None:
        raise NoPending("no pending step to resolve")
    if not fact or not fact.strip():
        raise EmptyFact("fact is blank")
    status = StepStatus(status)
    if status is StepStatus.PENDING:
        raise IllegalState("cannot resolve a step to Pending")
    ids = tuple(paragraph_ids)
    if status is StepStatus.RETRIEVED:
        if not ids:
            raise IllegalState("Retrieved resolution needs paragraph ids")
        if max_paragraphs is not None and len(ids) > max_paragraphs:
            raise IllegalState(f"{len(ids)} paragraph ids exceed k={max_paragraphs}")
    resolved = replace(last, fact=fact, status=status, paragraph_ids=ids)
    return replace(state, steps=state.steps[:-1] + (resolved,))


def attach_verdict(state: QuestionState, verdict: Verdict) -> QuestionState:
    if state.pending_step is not None:
        raise IllegalState("cannot conclude while a step is pending")
    return replace(state, verdict=verdict)


def branch_copy(state: QuestionState) -> QuestionState:
    # tuples of frozen steps: a shallow replace is already an independent value
    return replace(state, steps=tuple(state.steps))


def render_step(step: DecompStep) -> str:
    if step.pending:
        return f"({step.index}) [Q] {step.question_text}"
    return f"({step.index}) [Q] {step.question_text} [A] {step.fact}"


def render_state(state: QuestionState) -> str:
    """Serialize a state as the question followed by one ``(i) [Q] .. [A] ..`` line per step."""
    lines = [state.question.text]
    lines.extend(render_step(s) for s in state.steps)
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Trace

class EventKind(str, enum.Enum):
    PROMPT_SENT = "PromptSent"
    COMPLETION_RECEIVED = "CompletionReceived"
    ACTION_CHOSEN = "ActionChosen"
    STEP_ADDED = "StepAdded"
    STEP_RESOLVED = "StepResolved"
    BRANCHED = "Branched"
    VERDICT_ISSUED = "VerdictIssued"
    MODE_OVERRIDE = "ModeOverride"
    FORCED_FINAL = "ForcedFinal"
    RETRIEVAL_EMPTY = "RetrievalEmpty"
    FAILED = "Failed"


ZERO_CLOCK = "1970-01-01T00:00:00+00:00"


def utc_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


def zero_clock() -> str:
    return ZERO_CLOCK


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: EventKind
    payload: dict
    wall_clock: str

    def to_json(self) -> str:
        record = {
            "seq": self.seq,
            "kind": self.kind.value,
            "payload": self.payload,
            "wall_clock": self.wall_clock,
        }
        return json.dumps(record, ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(seq=int(d["seq"]), kind=EventKind(d["kind"]), payload=d["payload"], wall_clock=d["wall_clock"])


def _canonical(payload: dict) -> dict:
    # round-trip through json with sorted keys so payload layout is stable
    return json.loads(json.dumps(payload, sort_keys=True, ensure_ascii=False))


@dataclass
class Trace:
    """Append-only event log for one solve lineage."""

    clock: Callable[[], str] = field(default=utc_clock, repr=False)
    events: list[TraceEvent] = field(default_factory=list)

    def emit(self, kind: EventKind, **payload: Any) -> TraceEvent:
        ev = TraceEvent(seq=len(self.events) + 1, kind=EventKind(kind), payload=_canonical(payload), wall_clock=self.clock())
        self.events.append(ev)
        return ev

    def fork(self) -> "Trace":
        return Trace(clock=self.clock, events=list(self.events))

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: EventKind | str) -> list[TraceEvent]:
        kind = EventKind(kind)
        return [e for e in self.events if e.kind is kind]

    def count(self, kind: EventKind | str) -> int:
        return len(self.of_kind(kind))

    def generation_calls(self) -> int:
        return self.count(EventKind.PROMPT_SENT)

    def dumps(self, zero_wall_clock: bool = False) -> str:
        lines = []
        for e in self.events:
            if zero_wall_clock:
                e = replace(e, wall_clock=ZERO_CLOCK)
            lines.append(e.to_json())
        return "".join(line + "\n" for line in lines)

    def write(self, path, zero_wall_clock: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps(zero_wall_clock=zero_wall_clock))

    @classmethod
    def loads(cls, text: str) -> "Trace":
        events = [TraceEvent.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        for pos, e in enumerate(events, start=1):
            if e.seq != pos:
                raise ValueError(f"trace seq gap: expected {pos}, found {e.seq}")
        return cls(events=events)

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())
