"""The action loop: select an action from the state, execute it, repeat until a verdict."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .backend import Backend, GenParams
from .errors import IllegalState, RetrievalEmpty, SolveFailed, StepQAError
from .extract import retrieve_and_extract, retriever_query, self_answer
from .prompts import (
    PromptKind,
    compose_input,
    compose_zero_shot,
    parse_action_choice,
    parse_decomp_plan,
    parse_final_answer,
)
from .qstate import (
    ActionCode,
    EventKind,
    Question,
    QuestionState,
    StepStatus,
    Trace,
    Verdict,
    append_decomp,
    attach_verdict,
    initial_state,
    resolve_step,
    utc_clock,
)
from .retrieval import CorpusIndex, RetrievalConfig

log = logging.getLogger(__name__)

UNKNOWN_FACT = "unknown"


class RunMode(str, enum.Enum):
    ZERO_SHOT = "zeroshot"
    COT = "cot"
    DE = "de"
    DERE = "dere"
    FULL = "full"

    @property
    def allows_decomposition(self) -> bool:
        return self in (RunMode.DE, RunMode.DERE, RunMode.FULL)

    @property
    def allows_retrieval(self) -> bool:
        return self in (RunMode.DERE, RunMode.FULL)


@dataclass(frozen=True)
class EngineConfig:
    max_rounds: int = 8
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    mode: RunMode = RunMode.DERE
    gen: GenParams = field(default_factory=GenParams)

    def __post_init__(self):
        if int(self.max_rounds) < 1:
            raise ValueError("max_rounds must be >= 1")
        object.__setattr__(self, "mode", RunMode(self.mode))


@dataclass
class Deps:
    """Everything a solve needs besides the question.

    ``reader`` and ``embedder`` default to ``core`` when omitted.
    """

    core: Backend
    reader: Optional[Backend] = None
    embedder: object = None
    index: Optional[CorpusIndex] = None

    def __post_init__(self):
        if self.reader is None:
            self.reader = self.core
        if self.embedder is None:
            self.embedder = self.core


class TracingBackend:
    """Proxy that logs every generation call as a PromptSent/CompletionReceived pair."""

    def __init__(self, inner: Backend, trace: Trace, role: str):
        self.inner = inner
        self.trace = trace
        self.role = role

    @property
    def dim(self):
        return self.inner.dim

    def _received(self, completions):
        self.trace.emit(EventKind.COMPLETION_RECEIVED, completions=[c.to_dict() for c in completions])

    def generate(self, prompt, params=None):
        self.trace.emit(EventKind.PROMPT_SENT, role=self.role, prompt=prompt)
        c = self.inner.generate(prompt, params)
        self._received([c])
        return c

    def generate_n(self, prompt, params=None, n=None):
        self.trace.emit(EventKind.PROMPT_SENT, role=self.role, prompt=prompt)
        cs = self.inner.generate_n(prompt, params, n)
        self._received(cs)
        return cs

    def generate_fused(self, prompts, params=None):
        prompts = list(prompts)
        self.trace.emit(EventKind.PROMPT_SENT, role=self.role, prompts=prompts)
        c = self.inner.generate_fused(prompts, params)
        self._received([c])
        return c

    def embed(self, texts):
        return self.inner.embed(texts)


def _traced(backend, trace: Optional[Trace], role: str):
    if trace is None or isinstance(backend, TracingBackend):
        return backend
    return TracingBackend(backend, trace, role)


def select_action(state: QuestionState, core: Backend, trace: Optional[Trace] = None, params: Optional[GenParams] = None) -> ActionCode:
    """Ask the core model which action to take next.

    Without a pending step the choice is FinalAnswer [A] vs AddDecomp [B];
    with one it is RetrieveExtract [A] vs SelfAnswer [B].
    """
    if state.verdict is not None:
        raise IllegalState("state already has a verdict")
    core = _traced(core, trace, "core")
    pending = state.pending_step
    if pending is None:
        choice = parse_action_choice(core.generate(compose_input(PromptKind.ACTION_SELECT_1, state), params).text)
        return ActionCode.FINAL_ANSWER if choice == "A" else ActionCode.ADD_DECOMP
    prompt = compose_input(PromptKind.ACTION_SELECT_2, state, {"Decomp": pending.question_text})
    choice = parse_action_choice(core.generate(prompt, params).text)
    return ActionCode.RETRIEVE_EXTRACT if choice == "A" else ActionCode.SELF_ANSWER


def _coerce(action: ActionCode, mode: RunMode, trace: Optional[Trace]) -> ActionCode:
    coerced = action
    if action is ActionCode.RETRIEVE_EXTRACT and not mode.allows_retrieval:
        coerced = ActionCode.SELF_ANSWER
    elif action is ActionCode.ADD_DECOMP and not mode.allows_decomposition:
        coerced = ActionCode.FINAL_ANSWER
    if coerced is not action and trace is not None:
        trace.emit(EventKind.MODE_OVERRIDE, mode=mode.value, requested=action.value, executed=coerced.value)
    return coerced


def next_action(state: QuestionState, deps: Deps, cfg: EngineConfig, trace: Optional[Trace] = None) -> ActionCode:
    """Choose the action for this state, honouring the round cap and the run mode."""
    if state.verdict is not None:
        raise IllegalState("state already has a verdict")
    if state.pending_step is None and len(state.steps) >= cfg.max_rounds:
        if trace is not None:
            trace.emit(EventKind.FORCED_FINAL, rounds=len(state.steps), max_rounds=cfg.max_rounds)
        return ActionCode.FINAL_ANSWER
    action = select_action(state, deps.core, trace, cfg.gen)
    if trace is not None:
        trace.emit(EventKind.ACTION_CHOSEN, action=action.value)
    return _coerce(action, cfg.mode, trace)


def final_answer(state: QuestionState, core, cfg: EngineConfig, trace: Optional[Trace] = None) -> QuestionState:
    core = _traced(core, trace, "core")
    verdict = parse_final_answer(core.generate(compose_input(PromptKind.FINAL_ANSWER, state), cfg.gen).text)
    state = attach_verdict(state, verdict)
    if trace is not None:
        trace.emit(EventKind.VERDICT_ISSUED, answer=verdict.answer, rationale=verdict.rationale)
    return state


def add_decomp(state: QuestionState, d_text: str, pseudo: str, trace: Optional[Trace], discarded: int = 0) -> QuestionState:
    state = append_decomp(state, d_text, pseudo)
    if trace is not None:
        step = state.steps[-1]
        trace.emit(EventKind.STEP_ADDED, index=step.index, question=step.question_text, pseudo_answer=pseudo, discarded=discarded)
    return state


def _resolved(state: QuestionState, trace: Optional[Trace], action: ActionCode, **extra) -> QuestionState:
    if trace is not None:
        step = state.steps[-1]
        trace.emit(
            EventKind.STEP_RESOLVED,
            index=step.index,
            action=action.value,
            status=step.status.value,
            fact=step.fact,
            paragraph_ids=list(step.paragraph_ids),
            **extra,
        )
    return state


def _self_answer_step(state, deps, cfg, trace, action=ActionCode.SELF_ANSWER):
    fact = self_answer(state, _traced(deps.core, trace, "core"), cfg.gen)
    return _resolved(resolve_step(state, fact, StepStatus.SELF_ANSWERED), trace, action)


def _retrieve_step(state, deps, cfg, trace):
    query = retriever_query(state)
    try:
        fact, hits = retrieve_and_extract(
            state, deps.index, deps.embedder, _traced(deps.reader, trace, "reader"), cfg.retrieval, cfg.gen
        )
    except RetrievalEmpty as exc:
        if trace is not None:
            trace.emit(EventKind.RETRIEVAL_EMPTY, index=state.pending_step.index, reason=str(exc))
        return _empty_retrieval_fallback(state, deps, cfg, trace)
    state = resolve_step(state, fact, StepStatus.RETRIEVED, [h.para_id for h in hits], cfg.retrieval.k)
    return _resolved(state, trace, ActionCode.RETRIEVE_EXTRACT, query=query)


def _empty_retrieval_fallback(state, deps, cfg, trace):
    pending = state.pending_step
    try:
        return _self_answer_step(state, deps, cfg, trace, ActionCode.RETRIEVE_EXTRACT)
    except StepQAError as exc:
        log.info("self-answer fallback failed for step %d: %s", pending.index, exc)
    fact = pending.pseudo_answer if pending.pseudo_answer and pending.pseudo_answer.strip() else UNKNOWN_FACT
    return _resolved(resolve_step(state, fact, StepStatus.SELF_ANSWERED), trace, ActionCode.RETRIEVE_EXTRACT, fallback=True)


def execute(action: ActionCode, state: QuestionState, deps: Deps, cfg: EngineConfig, trace: Optional[Trace] = None) -> QuestionState:
    action = ActionCode(action)
    if action not in state.legal_actions():
        raise IllegalState(f"{action.value} is not legal in this state")
    if action is ActionCode.FINAL_ANSWER:
        return final_answer(state, deps.core, cfg, trace)
    if action is ActionCode.ADD_DECOMP:
        core = _traced(deps.core, trace, "core")
        plan = parse_decomp_plan(core.generate(compose_input(PromptKind.ADD_DECOMP, state), cfg.gen).text)
        d_text, pseudo = plan.first
        return add_decomp(state, d_text, pseudo, trace, discarded=len(plan) - 1)
    if action is ActionCode.RETRIEVE_EXTRACT:
        return _retrieve_step(state, deps, cfg, trace)
    return _self_answer_step(state, deps, cfg, trace)


def step(state: QuestionState, deps: Deps, cfg: EngineConfig, trace: Optional[Trace] = None) -> QuestionState:
    """Advance the state by exactly one action."""
    return execute(next_action(state, deps, cfg, trace), state, deps, cfg, trace)


def _as_question(question) -> Question:
    if isinstance(question, Question):
        return question
    return Question(id="q", text=str(question))


def _fail(trace: Trace, exc: Exception) -> SolveFailed:
    trace.emit(EventKind.FAILED, error=type(exc).__name__, message=str(exc))
    err = SolveFailed(f"{type(exc).__name__}: {exc}", trace)
    err.__cause__ = exc
    return err


def run_lineage(state: QuestionState, deps: Deps, cfg: EngineConfig, trace: Trace) -> QuestionState:
    # each round adds at most one decomposition and resolves it, so the
    # forced final at max_rounds bounds this loop
    limit = 3 * cfg.max_rounds + 2
    for _ in range(limit):
        if state.verdict is not None:
            return state
        state = step(state, deps, cfg, trace)
    if state.verdict is None:
        raise IllegalState(f"no verdict after {limit} actions")
    return state


def solve_state(question, deps: Deps, cfg: EngineConfig = EngineConfig(), clock: Callable[[], str] = utc_clock) -> tuple[QuestionState, Trace]:
    """Run one question to a verdict and return the final state with its trace.

    Raises SolveFailed (carrying the trace) on any backend, parser, or executor error.
    """
    mode = RunMode(cfg.mode)
    if mode is RunMode.FULL:
        raise ValueError("mode 'full' branches; use stepqa.explorer.explore")
    trace = Trace(clock=clock)
    state = initial_state(_as_question(question))
    try:
        if mode is RunMode.ZERO_SHOT:
            core = _traced(deps.core, trace, "core")
            verdict = parse_final_answer(core.generate(compose_zero_shot(state), cfg.gen).text)
            return attach_verdict(state, verdict), trace
        if mode is RunMode.COT:
            trace.emit(EventKind.ACTION_CHOSEN, action=ActionCode.FINAL_ANSWER.value)
            return final_answer(state, deps.core, cfg, trace), trace
        return run_lineage(state, deps, cfg, trace), trace
    except StepQAError as exc:
        raise _fail(trace, exc) from exc


def solve(question, deps: Deps, cfg: EngineConfig = EngineConfig(), clock: Callable[[], str] = utc_clock) -> tuple[Verdict, Trace]:
    state, trace = solve_state(question, deps, cfg, clock)
    return state.verdict, trace
