"""StrategyQA ingestion, annotation refinement, training-pair construction and scoring."""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .backend import FUSED_JOINER, Backend
from .errors import (
    FileMissing,
    IncompleteRefinement,
    MissingPrediction,
    ParseError,
    SchemaViolation,
    StepQAError,
)
from .prompts import PromptKind, compose_input, format_decomp_plan, parse_decomp_plan, render_prompt
from .qstate import Question, QuestionState, StepStatus, Verdict, append_decomp, initial_state, resolve_step

log = logging.getLogger(__name__)

PLACEHOLDER = re.compile(r"#(\d+)")
_NON_EVIDENCE = {"operation", "no_evidence"}
_MODELLED = {"qid", "question", "answer", "decomposition", "facts", "evidence"}


@dataclass(frozen=True)
class StrategyQAItem:
    qid: str
    question: str
    answer: Optional[bool] = None
    decompositions: tuple[str, ...] = ()
    facts: tuple[str, ...] = ()
    evidence_para_ids: Optional[tuple[tuple[str, ...], ...]] = None
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def labeled(self) -> bool:
        return self.answer is not None

    def to_record(self) -> dict:
        rec = {"qid": self.qid, "question": self.question}
        rec.update(self.extra)
        if self.answer is not None:
            rec["answer"] = self.answer
        if self.decompositions or "decomposition" in self.extra:
            rec["decomposition"] = list(self.decompositions)
        if self.facts or self.labeled:
            rec["facts"] = list(self.facts)
        return rec


def _collect_ids(node) -> list[str]:
    if isinstance(node, str):
        return [] if node in _NON_EVIDENCE else [node]
    out = []
    for child in node or ():
        out.extend(_collect_ids(child))
    return out


def _evidence_ids(evidence, n_decomps: int) -> tuple[tuple[str, ...], ...]:
    # first annotator's evidence, one id list per decomposition step
    annot = evidence[0] if evidence else []
    per_step = []
    for i in range(n_decomps):
        ids = _collect_ids(annot[i]) if i < len(annot) else []
        per_step.append(tuple(dict.fromkeys(ids)))
    return tuple(per_step)


def check_placeholders(decompositions: Sequence[str]) -> list[str]:
    problems = []
    for pos, text in enumerate(decompositions, start=1):
        for m in PLACEHOLDER.finditer(text):
            i = int(m.group(1))
            if not 1 <= i < pos:
                problems.append(f"decomposition {pos} references #{i}")
    return problems


def item_from_record(rec: Mapping[str, Any]) -> StrategyQAItem:
    """Build and validate one item; raises SchemaViolation naming the qid."""
    qid = str(rec.get("qid", "<missing qid>"))
    problems = []
    question = rec.get("question")
    if not isinstance(question, str) or not question.strip():
        problems.append("question missing or empty")
    decomps = rec.get("decomposition", [])
    if not isinstance(decomps, list) or not all(isinstance(d, str) for d in decomps):
        problems.append("decomposition must be a list of strings")
        decomps = []
    problems.extend(check_placeholders(decomps))
    answer = rec.get("answer")
    if answer is not None and not isinstance(answer, bool):
        problems.append("answer must be boolean")
    has_evidence = "evidence" in rec
    if (answer is None) != (not has_evidence):
        problems.append("labeled items need both answer and evidence; test items neither")
    if problems:
        raise SchemaViolation(f"{qid}: " + "; ".join(problems), [qid])
    extra = {k: v for k, v in rec.items() if k not in _MODELLED}
    evidence = None
    if has_evidence:
        extra["evidence"] = rec["evidence"]
        evidence = _evidence_ids(rec["evidence"], len(decomps))
    if "decomposition" in rec and not decomps:
        extra["decomposition"] = []
    return StrategyQAItem(
        qid=qid,
        question=question,
        answer=answer,
        decompositions=tuple(decomps),
        facts=tuple(rec.get("facts", ())),
        evidence_para_ids=evidence,
        extra=extra,
    )


def load_dataset(path: str | os.PathLike, strict: bool = True) -> list[StrategyQAItem]:
    """Load a StrategyQA JSON array (or JSON-lines) file.

    With ``strict`` any malformed item raises SchemaViolation listing every
    offending qid; otherwise malformed items are logged and dropped.
    """
    if not os.path.exists(path):
        raise FileMissing(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("["):
        records = json.loads(text)
    else:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    items, bad, messages = [], [], []
    for rec in records:
        try:
            items.append(item_from_record(rec))
        except SchemaViolation as exc:
            bad.extend(exc.qids)
            messages.append(str(exc))
    if bad:
        for msg in messages:
            log.warning("rejected item %s", msg)
        if strict:
            raise SchemaViolation(f"{len(bad)} malformed item(s): " + " | ".join(messages[:5]), bad)
    return items


def dump_dataset(items: Iterable[StrategyQAItem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([it.to_record() for it in items], fh, ensure_ascii=False, indent=1)
        fh.write("\n")


# --------------------------------------------------------------------------
# refinement

REFINE_TEMPLATE = (
    "Rewrite the decomposition questions of a multi-step question so that every reference "
    "of the form #i is replaced by what it stands for, then give a concise answer to each "
    "decomposition. Use only information stated in the facts below and stay consistent "
    "with the final answer.\n"
    "Question: {question}\n"
    "Final answer: {answer}\n"
    "Facts:\n{facts}\n"
    "Decompositions:\n{decompositions}\n"
    'Reply with one line per decomposition in the format "(i) [Q] (rewritten decomposition) [A] (concise answer)".'
)


@dataclass(frozen=True)
class RefinedItem:
    base: StrategyQAItem
    resolved_decompositions: tuple[str, ...]
    per_decomp_answers: tuple[str, ...]
    ok: bool = True
    problem: Optional[str] = None

    def __post_init__(self):
        if self.ok:
            if len(self.per_decomp_answers) != len(self.base.decompositions):
                raise ValueError("one answer per decomposition is required")
            if len(self.resolved_decompositions) != len(self.base.decompositions):
                raise ValueError("one resolved decomposition per original is required")
            if any(PLACEHOLDER.search(d) for d in self.resolved_decompositions):
                raise ValueError("resolved decompositions still contain #i placeholders")


def refine_prompt(item: StrategyQAItem) -> str:
    return REFINE_TEMPLATE.format(
        question=item.question,
        answer="yes" if item.answer else "no",
        facts="\n".join(f"- {f}" for f in item.facts),
        decompositions="\n".join(f"({i}) {d}" for i, d in enumerate(item.decompositions, start=1)),
    )


def _unrefined(item: StrategyQAItem, problem: str) -> RefinedItem:
    return RefinedItem(item, tuple(item.decompositions), (), ok=False, problem=problem)


def refine_item(item: StrategyQAItem, refiner: Backend) -> RefinedItem:
    if not item.labeled:
        return _unrefined(item, "test items carry no answer or facts")
    if not item.decompositions:
        return _unrefined(item, "no decompositions")
    try:
        completion = refiner.generate(refine_prompt(item)).text
        plan = parse_decomp_plan(completion)
    except (StepQAError, ParseError) as exc:
        return _unrefined(item, f"{type(exc).__name__}: {exc}")
    if len(plan) != len(item.decompositions):
        return _unrefined(item, f"refiner returned {len(plan)} decompositions for {len(item.decompositions)}")
    questions = tuple(q for q, _ in plan.entries)
    answers = tuple(a for _, a in plan.entries)
    if any(PLACEHOLDER.search(q) for q in questions):
        return _unrefined(item, "placeholders remain after refinement")
    if not all(a.strip() for a in answers):
        return _unrefined(item, "refiner left a decomposition unanswered")
    return RefinedItem(item, questions, answers)


def refine_annotations(items: Sequence[StrategyQAItem], refiner: Backend, max_workers: int = 1) -> list[RefinedItem]:
    """Fill ``#i`` references and attach one concise answer per decomposition.

    Failures are per item: the item comes back unrefined with ``ok=False``.
    """
    if max_workers <= 1:
        return [refine_item(it, refiner) for it in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda it: refine_item(it, refiner), items))


# --------------------------------------------------------------------------
# training pairs

class TaskTag(str, enum.Enum):
    ACTION_SELECT_1 = "ActionSelect1"
    ACTION_SELECT_2 = "ActionSelect2"
    ADD_DECOMP = "AddDecomp"
    SELF_ANSWER = "SelfAnswer"
    FINAL_ANSWER = "FinalAnswer"
    EXTRACTOR_READER = "ExtractorReader"


@dataclass(frozen=True)
class TrainingPair:
    task_tag: TaskTag
    input_text: str
    target_text: str

    def to_record(self) -> dict:
        return {"task_tag": self.task_tag.value, "input": self.input_text, "target": self.target_text}


def final_target(item: StrategyQAItem) -> str:
    return f"Reasoning steps: {' '.join(item.facts)} Therefore, the final answer is: {'yes' if item.answer else 'no'}"


def _reader_input(decomp: str, pseudo: str, para_ids: Sequence[str], paragraphs: Mapping[str, str], facts: Sequence[str]) -> str:
    contexts = [paragraphs[p] for p in para_ids if p in paragraphs]
    if not contexts:
        contexts = [" ".join(facts)]
    return FUSED_JOINER.join(
        render_prompt(PromptKind.EXTRACTOR_INPUT, slots={"decomp": decomp, "pseudo_answer": pseudo, "paragraph": c})
        for c in contexts
    )


def pairs_for_item(r: RefinedItem, paragraphs: Optional[Mapping[str, str]] = None) -> list[TrainingPair]:
    """Replay the gold solving process of one item, emitting a pair at every timestep."""
    if not r.ok:
        raise IncompleteRefinement(f"{r.base.qid}: {r.problem}")
    item = r.base
    paragraphs = paragraphs or {}
    evidence = item.evidence_para_ids or tuple(() for _ in item.decompositions)
    state = initial_state(Question(id=item.qid, text=item.question))
    pairs: list[TrainingPair] = []
    m = len(r.resolved_decompositions)
    for i, (d, a) in enumerate(zip(r.resolved_decompositions, r.per_decomp_answers)):
        pairs.append(TrainingPair(TaskTag.ACTION_SELECT_1, compose_input(PromptKind.ACTION_SELECT_1, state), "[B]"))
        remaining = list(zip(r.resolved_decompositions[i:], r.per_decomp_answers[i:]))
        pairs.append(
            TrainingPair(
                TaskTag.ADD_DECOMP,
                compose_input(PromptKind.ADD_DECOMP, state),
                format_decomp_plan(remaining, start=len(state.steps) + 1),
            )
        )
        state = append_decomp(state, d, a)
        ids = evidence[i] if i < len(evidence) else ()
        pairs.append(
            TrainingPair(
                TaskTag.ACTION_SELECT_2,
                compose_input(PromptKind.ACTION_SELECT_2, state, {"Decomp": d}),
                "[A]" if ids else "[B]",
            )
        )
        if ids:
            pairs.append(TrainingPair(TaskTag.EXTRACTOR_READER, _reader_input(d, a, ids, paragraphs, item.facts), a))
            state = resolve_step(state, a, StepStatus.RETRIEVED, ids)
        else:
            pairs.append(
                TrainingPair(TaskTag.SELF_ANSWER, compose_input(PromptKind.SELF_ANSWER, state, {"Decomp": d}), a)
            )
            state = resolve_step(state, a, StepStatus.SELF_ANSWERED)
    pairs.append(TrainingPair(TaskTag.ACTION_SELECT_1, compose_input(PromptKind.ACTION_SELECT_1, state), "[A]"))
    pairs.append(TrainingPair(TaskTag.FINAL_ANSWER, compose_input(PromptKind.FINAL_ANSWER, state), final_target(item)))
    assert len(pairs) == 4 * m + 2
    return pairs


def build_training_pairs(
    refined: Sequence[RefinedItem],
    paragraphs: Optional[Mapping[str, str]] = None,
    strict: bool = False,
) -> list[TrainingPair]:
    """Training pairs for every successfully refined item; flagged items are skipped and logged."""
    out = []
    for r in refined:
        try:
            out.extend(pairs_for_item(r, paragraphs))
        except IncompleteRefinement:
            if strict:
                raise
            log.warning("skipping %s: %s", r.base.qid, r.problem)
    return out


def write_pairs(pairs: Iterable[TrainingPair], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


# --------------------------------------------------------------------------
# scoring and prediction files

def score_accuracy(predictions: Mapping[str, bool], gold: Sequence[StrategyQAItem]) -> float:
    missing = [it.qid for it in gold if it.qid not in predictions]
    if missing or not gold:
        raise MissingPrediction(missing)
    correct = sum(bool(predictions[it.qid]) == it.answer for it in gold)
    return correct / len(gold)


@dataclass(frozen=True)
class PredictionRecord:
    qid: str
    verdict: Verdict
    decompositions: tuple[str, ...] = ()
    paragraph_ids: tuple[str, ...] = ()

    @classmethod
    def from_state(cls, qid: str, state: QuestionState) -> "PredictionRecord":
        if state.verdict is None:
            raise ValueError("state has no verdict")
        ids = tuple(dict.fromkeys(p for s in state.steps for p in s.paragraph_ids))
        return cls(qid, state.verdict, tuple(s.question_text for s in state.steps), ids)


def write_predictions(results: Sequence, path) -> dict:
    """Write ``{qid: {answer, decomposition, paragraphs}}``; duplicate qids keep the last record."""
    if not results:
        raise ValueError("no results to write")
    out: dict[str, dict] = {}
    for r in results:
        if not isinstance(r, PredictionRecord):
            r = PredictionRecord(r[0], r[1], tuple(r[2]), tuple(r[3]))
        if r.qid in out:
            warnings.warn(f"duplicate prediction for {r.qid}; keeping the last one", stacklevel=2)
        out[r.qid] = {
            "answer": r.verdict.as_bool,
            "decomposition": list(r.decompositions),
            "paragraphs": list(r.paragraph_ids),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, ensure_ascii=False, indent=1)
        fh.write("\n")
    return out


# --------------------------------------------------------------------------
# manual error analysis

class ErrorTag(str, enum.Enum):
    UNREASONABLE_DECOMPOSITION = "UnreasonableDecomposition"
    WRONG_ACTION_SELECTION = "WrongActionSelection"
    INCORRECT_FACTS = "IncorrectFacts"
    LOGICAL_DEDUCTION_ERROR = "LogicalDeductionError"


@dataclass(frozen=True)
class ErrorAnnotation:
    qid: str
    correct: bool
    tags: frozenset = frozenset()
    note: str = ""

    def __post_init__(self):
        tags = frozenset(ErrorTag(t) for t in self.tags)
        object.__setattr__(self, "tags", tags)
        if not self.correct and not tags:
            raise ValueError(f"{self.qid}: an incorrect item needs at least one error tag")

    def to_record(self) -> dict:
        return {"qid": self.qid, "correct": self.correct, "tags": sorted(t.value for t in self.tags), "note": self.note}


def write_annotations(annotations: Iterable[ErrorAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(json.dumps(a.to_record(), ensure_ascii=False) + "\n")


def read_annotations(path) -> list[ErrorAnnotation]:
    with open(path, encoding="utf-8") as fh:
        return [
            ErrorAnnotation(r["qid"], r["correct"], frozenset(r.get("tags", ())), r.get("note", ""))
            for r in map(json.loads, filter(str.strip, fh))
        ]


def error_proportions(annotations: Iterable[ErrorAnnotation]) -> dict[str, float]:
    """Share of incorrect items carrying each tag. Items may carry several tags, so shares can sum past 1."""
    wrong = [a for a in annotations if not a.correct]
    if not wrong:
        return {t.value: 0.0 for t in ErrorTag}
    return {t.value: sum(t in a.tags for a in wrong) / len(wrong) for t in ErrorTag}


def write_refined(refined: Iterable[RefinedItem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in refined:
            rec = {
                "item": r.base.to_record(),
                "resolved_decompositions": list(r.resolved_decompositions),
                "per_decomp_answers": list(r.per_decomp_answers),
                "ok": r.ok,
                "problem": r.problem,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_refined(path) -> list[RefinedItem]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in filter(str.strip, fh):
            rec = json.loads(line)
            out.append(
                RefinedItem(
                    item_from_record(rec["item"]),
                    tuple(rec["resolved_decompositions"]),
                    tuple(rec["per_decomp_answers"]),
                    ok=rec["ok"],
                    problem=rec.get("problem"),
                )
            )
    return out
