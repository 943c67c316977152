from __future__ import annotations

import pytest

from stepqa.backend import CallableBackend, HashEmbedder, ScriptedBackend
from stepqa.engine import Deps, EngineConfig, RunMode, UNKNOWN_FACT, select_action, solve, solve_state, step
from stepqa.errors import IllegalState, ScriptMiss, SolveFailed
from stepqa.prompts import PromptKind, compose_input, compose_zero_shot
from stepqa.qstate import (
    ActionCode,
    EventKind,
    Question,
    StepStatus,
    Trace,
    Verdict,
    append_decomp,
    attach_verdict,
    initial_state,
    resolve_step,
    zero_clock,
)
from stepqa.retrieval import CorpusIndex, make_doc

from helpers import FOLIO_QUESTION, RuleCore, folio_backend, folio_index

Q = Question("q", "Did the author of Hamlet outlive Queen Elizabeth I?")


def resolved_state():
    s = append_decomp(initial_state(Q), "Who wrote Hamlet?")
    return resolve_step(s, "Shakespeare wrote Hamlet.", StepStatus.SELF_ANSWERED)


def executed(trace, action):
    return [e for e in trace.of_kind(EventKind.STEP_RESOLVED) if e.payload["action"] == action]


def test_select_action_mappings():
    s = resolved_state()
    core = ScriptedBackend({compose_input(PromptKind.ACTION_SELECT_1, s): ["[A]"]})
    assert select_action(s, core) is ActionCode.FINAL_ANSWER
    p = append_decomp(s, "Is 1616 after 1603?")
    prompt = compose_input(PromptKind.ACTION_SELECT_2, p, {"Decomp": "Is 1616 after 1603?"})
    assert select_action(p, ScriptedBackend({prompt: ["[B]"]})) is ActionCode.SELF_ANSWER
    assert select_action(p, ScriptedBackend({prompt: ["[A]: external evidence is needed"]})) is ActionCode.RETRIEVE_EXTRACT
    with pytest.raises(IllegalState):
        select_action(attach_verdict(s, Verdict("yes", "r")), core)


def test_first_round_keeps_only_first_plan_entry():
    s0 = initial_state(Q)
    plan = "(1) [Q] Who wrote Hamlet? [A] Marlowe (2) [Q] When did #1 die? [A] 1593 (3) [Q] Is #2 after 1603? [A] No"
    core = ScriptedBackend({
        compose_input(PromptKind.ACTION_SELECT_1, s0): ["[B]"],
        compose_input(PromptKind.ADD_DECOMP, s0): [plan],
    })
    trace = Trace(clock=zero_clock)
    s2 = step(s0, Deps(core=core), EngineConfig(), trace)
    assert len(s2.steps) == 1 and s2.steps[0].pending
    assert (s2.steps[0].question_text, s2.steps[0].pseudo_answer) == ("Who wrote Hamlet?", "Marlowe")
    added = trace.of_kind(EventKind.STEP_ADDED)[0].payload
    assert added["discarded"] == 2
    assert [e.kind for e in trace][:3] == [EventKind.PROMPT_SENT, EventKind.COMPLETION_RECEIVED, EventKind.ACTION_CHOSEN]


def test_step_on_concluded_state_is_rejected():
    with pytest.raises(IllegalState):
        step(attach_verdict(resolved_state(), Verdict("no", "r")), Deps(core=ScriptedBackend()), EngineConfig())


def test_de_mode_coerces_retrieval_to_self_answer():
    core = RuleCore(rounds=2, retrieve=True).backend()
    verdict, trace = solve(Q, Deps(core=core), EngineConfig(mode=RunMode.DE), clock=zero_clock)
    overrides = trace.of_kind(EventKind.MODE_OVERRIDE)
    assert len(overrides) == 2
    assert overrides[0].payload == {"executed": "SelfAnswer", "mode": "de", "requested": "RetrieveExtract"}
    assert executed(trace, "RetrieveExtract") == [] and len(executed(trace, "SelfAnswer")) == 2


def test_cot_mode_never_decomposes():
    core = RuleCore(rounds=5).backend()
    verdict, trace = solve(Q, Deps(core=core), EngineConfig(mode=RunMode.COT), clock=zero_clock)
    assert trace.count(EventKind.STEP_ADDED) == 0 and trace.generation_calls() == 1
    assert verdict.rationale.startswith("Reasoning steps")


def test_zero_shot_yes_gives_two_event_trace():
    s = initial_state(Q)
    core = ScriptedBackend({compose_zero_shot(s): ["yes"]})
    verdict, trace = solve(Q, Deps(core=core), EngineConfig(mode=RunMode.ZERO_SHOT), clock=zero_clock)
    assert verdict == Verdict("yes", "")
    assert [e.kind for e in trace] == [EventKind.PROMPT_SENT, EventKind.COMPLETION_RECEIVED]


def test_forced_final_after_max_rounds():
    core = RuleCore(rounds=99).backend()
    state, trace = solve_state(Q, Deps(core=core), EngineConfig(max_rounds=3, mode=RunMode.DE), clock=zero_clock)
    assert trace.count(EventKind.STEP_ADDED) == 3
    forced = trace.of_kind(EventKind.FORCED_FINAL)
    assert len(forced) == 1 and forced[0].payload == {"max_rounds": 3, "rounds": 3}
    assert state.verdict is not None and len(state.steps) == 3
    # the forced final replaces the fourth selection prompt
    assert trace.count(EventKind.ACTION_CHOSEN) == 6


def test_empty_retrieval_falls_back_to_self_answer():
    core = RuleCore(rounds=1, retrieve=True).backend()
    state, trace = solve_state(Q, Deps(core=core, index=None), EngineConfig(), clock=zero_clock)
    assert trace.count(EventKind.RETRIEVAL_EMPTY) == 1
    assert state.steps[0].status is StepStatus.SELF_ANSWERED
    assert state.steps[0].fact.startswith("self answer to")


def _no_self_answer(rule):
    def fn(prompt, n):
        if "use strict logic" in prompt.rsplit(" </s>", 1)[-1]:
            raise ScriptMiss(prompt)
        return rule(prompt, n)

    return CallableBackend(fn)


def test_empty_retrieval_then_failed_self_answer_uses_pseudo_answer():
    state, trace = solve_state(Q, Deps(core=_no_self_answer(RuleCore(rounds=1, retrieve=True))), EngineConfig(), clock=zero_clock)
    assert state.steps[0].fact == "guess 0"
    assert trace.of_kind(EventKind.STEP_RESOLVED)[0].payload["fallback"] is True


def test_empty_retrieval_without_pseudo_answer_records_unknown():
    class NoPseudo(RuleCore):
        def plan(self, round_no, variant):
            return f"({round_no}) [Q] What is strategy {variant} round {round_no}?"

    state, _ = solve_state(Q, Deps(core=_no_self_answer(NoPseudo(rounds=1, retrieve=True))), EngineConfig(), clock=zero_clock)
    assert state.steps[0].fact == UNKNOWN_FACT


def test_dere_retrieves_with_index():
    e = HashEmbedder(dim=8)
    index = CorpusIndex.build([make_doc("a", "A", ["alpha", "beta"]), make_doc("b", "B", ["gamma"])], e)
    core = RuleCore(rounds=2, retrieve=True).backend(embedder=e)
    state, trace = solve_state(Q, Deps(core=core, index=index), EngineConfig(), clock=zero_clock)
    assert [s.status for s in state.steps] == [StepStatus.RETRIEVED, StepStatus.RETRIEVED]
    assert len(executed(trace, "RetrieveExtract")) == 2
    assert executed(trace, "RetrieveExtract")[0].payload["query"].startswith("Question: " + Q.text)


def test_unparsable_final_verdict_raises_solve_failed_with_trace():
    def fn(prompt, n):
        return "[A]" if "Synthesis" in prompt else "I cannot tell."

    with pytest.raises(SolveFailed) as err:
        solve(Q, Deps(core=CallableBackend(fn)), EngineConfig(), clock=zero_clock)
    trace = err.value.trace
    assert trace.events[-1].kind is EventKind.FAILED
    assert trace.events[-1].payload["error"] == "UnparsableVerdict"


def test_full_mode_is_delegated():
    with pytest.raises(ValueError):
        solve(Q, Deps(core=ScriptedBackend()), EngineConfig(mode=RunMode.FULL))


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(max_rounds=0)
    assert EngineConfig(mode="de").mode is RunMode.DE


def test_folio_transcript_replays_identically():
    runs = []
    for _ in range(2):
        core = folio_backend()
        state, trace = solve_state(Question("folio", FOLIO_QUESTION), Deps(core=core, index=folio_index(core)), EngineConfig(), clock=zero_clock)
        runs.append(trace.dumps())
        assert core.unused() == []
    assert runs[0] == runs[1]
    assert state.verdict.answer == "no"
    assert [s.status for s in state.steps] == [StepStatus.RETRIEVED, StepStatus.RETRIEVED, StepStatus.SELF_ANSWERED]
    # every generation call is logged as a prompt/completion pair
    kinds = [e.kind for e in trace]
    for i, k in enumerate(kinds):
        if k is EventKind.PROMPT_SENT:
            assert kinds[i + 1] is EventKind.COMPLETION_RECEIVED
