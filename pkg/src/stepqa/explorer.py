"""Strategy exploration: fork the solve at early decompositions and vote over the leaves."""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .backend import Backend, GenParams
from .engine import Deps, EngineConfig, RunMode, _fail, _traced, add_decomp, execute, next_action, step
from .errors import AllLineagesFailed, AllUnparsable, ParseError, StepQAError
from .prompts import DecompPlan, PromptKind, compose_input, parse_decomp_plan
from .qstate import (
    ActionCode,
    EventKind,
    Question,
    QuestionState,
    Trace,
    Verdict,
    branch_copy,
    initial_state,
    utc_clock,
)


@dataclass(frozen=True)
class ExploreConfig:
    n: int = 4
    leaf_cap: int = 16
    branch_depth: int = 2

    def __post_init__(self):
        if self.n < 1 or self.leaf_cap < 1:
            raise ValueError("n and leaf_cap must be >= 1")
        if self.branch_depth < 0:
            raise ValueError("branch_depth must be >= 0")


@dataclass(frozen=True)
class BranchNode:
    lineage_id: int
    parent_id: Optional[int]
    branch_round: int
    decomp_text: Optional[str]


@dataclass
class Leaf:
    lineage_id: int
    verdict: Optional[Verdict]
    trace: Trace
    state: Optional[QuestionState] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.verdict is not None


@dataclass
class StrategyTree:
    root: Question
    nodes: list[BranchNode] = field(default_factory=list)
    leaves: list[Leaf] = field(default_factory=list)

    def ancestry(self, lineage_id: int) -> list[int]:
        parents = {n.lineage_id: n.parent_id for n in self.nodes}
        chain = [lineage_id]
        while parents[chain[-1]] is not None:
            chain.append(parents[chain[-1]])
        return chain

    @property
    def tally(self) -> tuple[int, int]:
        c = Counter(leaf.verdict.answer for leaf in self.leaves if leaf.ok)
        return c["yes"], c["no"]

    def summary(self) -> dict:
        yes, no = self.tally
        ok = [leaf for leaf in self.leaves if leaf.ok]
        winner = majority_vote([leaf.verdict for leaf in ok]) if ok else None
        return {
            "question": {"id": self.root.id, "text": self.root.text},
            "nodes": [
                {"lineage_id": n.lineage_id, "parent_id": n.parent_id, "branch_round": n.branch_round, "decomp": n.decomp_text}
                for n in self.nodes
            ],
            "leaves": [
                {
                    "lineage_id": leaf.lineage_id,
                    "answer": leaf.verdict.answer if leaf.ok else None,
                    "error": leaf.error,
                }
                for leaf in self.leaves
            ],
            "votes": {"yes": yes, "no": no, "failed": len(self.leaves) - len(ok)},
            "winner": None if winner is None else {"answer": winner.answer, "rationale": winner.rationale},
        }


_WS = re.compile(r"\s+")


def plan_key(question_text: str) -> str:
    return _WS.sub(" ", question_text.lower()).strip().rstrip("?.!,;: ").strip()


def branch_decomps(
    state: QuestionState,
    core: Backend,
    n: int,
    params: Optional[GenParams] = None,
    trace: Optional[Trace] = None,
) -> list[DecompPlan]:
    """n-best AddDecomp plans, deduplicated on their normalized first sub-question."""
    core = _traced(core, trace, "core")
    completions = core.generate_n(compose_input(PromptKind.ADD_DECOMP, state), params, n)
    plans, seen = [], set()
    parsed_any = False
    for c in completions:
        try:
            plan = parse_decomp_plan(c.text)
        except ParseError:
            continue
        parsed_any = True
        key = plan_key(plan.first[0])
        if key not in seen:
            seen.add(key)
            plans.append(plan)
    if not parsed_any:
        raise AllUnparsable(f"none of {len(completions)} beam completions parsed as a decomposition plan")
    return plans[:n]


def majority_vote(verdicts: list[Verdict]) -> Verdict:
    """Strict majority wins; a tie goes to the earliest verdict in the list."""
    if not verdicts:
        raise ValueError("majority_vote needs at least one verdict")
    counts = Counter(v.answer for v in verdicts)
    earliest = verdicts[0].answer
    other = "no" if earliest == "yes" else "yes"
    winner = other if counts[other] > counts[earliest] else earliest
    return next(v for v in verdicts if v.answer == winner)


@dataclass
class _Lineage:
    lineage_id: int
    state: QuestionState
    trace: Trace


def explore(
    question,
    deps: Deps,
    cfg: EngineConfig = EngineConfig(mode=RunMode.FULL),
    xcfg: ExploreConfig = ExploreConfig(),
    clock: Callable[[], str] = utc_clock,
) -> tuple[Verdict, StrategyTree]:
    """Solve with branching at each lineage's first ``branch_depth`` decompositions.

    Lineages run one after another in creation order, so lineage ids and the
    final vote do not depend on timing.
    """
    if RunMode(cfg.mode) is not RunMode.FULL:
        raise ValueError("explore requires mode 'full'")
    if not isinstance(question, Question):
        question = Question(id="q", text=str(question))
    tree = StrategyTree(root=question, nodes=[BranchNode(0, None, 0, None)])
    queue = deque([_Lineage(0, initial_state(question), Trace(clock=clock))])
    created = 1

    while queue:
        lin = queue.popleft()
        state, trace = lin.state, lin.trace
        try:
            while state.verdict is None:
                can_branch = (
                    state.pending_step is None
                    and len(state.steps) < min(xcfg.branch_depth, cfg.max_rounds)
                )
                if not can_branch:
                    state = step(state, deps, cfg, trace)
                    continue
                action = next_action(state, deps, cfg, trace)
                if action is not ActionCode.ADD_DECOMP:
                    state = execute(action, state, deps, cfg, trace)
                    continue
                plans = branch_decomps(state, deps.core, xcfg.n, cfg.gen, trace)
                room = max(0, xcfg.leaf_cap - created)
                plans = plans[: 1 + room]
                round_no = len(state.steps) + 1
                siblings = []
                for rank, plan in enumerate(plans[1:], start=1):
                    child_id = created
                    created += 1
                    child_trace = trace.fork()
                    child_trace.emit(
                        EventKind.BRANCHED, lineage_id=child_id, parent_id=lin.lineage_id, round=round_no, rank=rank
                    )
                    d_text, pseudo = plan.first
                    child_state = add_decomp(branch_copy(state), d_text, pseudo, child_trace, discarded=len(plan) - 1)
                    tree.nodes.append(BranchNode(child_id, lin.lineage_id, round_no, d_text))
                    siblings.append(_Lineage(child_id, child_state, child_trace))
                if siblings:
                    trace.emit(
                        EventKind.BRANCHED, lineage_id=lin.lineage_id, parent_id=lin.lineage_id, round=round_no, rank=0
                    )
                d_text, pseudo = plans[0].first
                state = add_decomp(state, d_text, pseudo, trace, discarded=len(plans[0]) - 1)
                queue.extend(siblings)
            tree.leaves.append(Leaf(lin.lineage_id, state.verdict, trace, state))
        except StepQAError as exc:
            failure = _fail(trace, exc)
            tree.leaves.append(Leaf(lin.lineage_id, None, failure.trace, state, error=str(failure)))

    tree.leaves.sort(key=lambda leaf: leaf.lineage_id)
    ok = [leaf.verdict for leaf in tree.leaves if leaf.ok]
    if not ok:
        raise AllLineagesFailed(f"all {len(tree.leaves)} lineages failed", tree)
    return majority_vote(ok), tree
