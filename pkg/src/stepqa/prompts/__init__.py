"""Prompt templates and response parsers.

Templates live in a versioned JSON resource (``templates_v1.json``) so the
exact bytes are reviewable outside the code. Placeholders use ``{Name}`` and
are substituted in a single pass, raw, with no escaping.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional

from ..errors import MissingSlot, NoDecompFound, UnknownKind, UnparsableChoice, UnparsableVerdict
from ..qstate import QuestionState, Verdict, render_state

__all__ = [
    "PromptKind",
    "DecompPlan",
    "TEMPLATE_VERSION",
    "INPUT_SEPARATOR",
    "ZERO_SHOT_TEMPLATE",
    "template",
    "placeholders",
    "render_prompt",
    "compose_input",
    "compose_zero_shot",
    "parse_action_choice",
    "parse_decomp_plan",
    "format_decomp_plan",
    "parse_final_answer",
]

TEMPLATE_VERSION = 1

# joins the rendered system prompt (which ends with the question state) to the instruction
INPUT_SEPARATOR = " </s>"

ZERO_SHOT_TEMPLATE = "Answer yes or no: {Q}"

_SLOT_RE = re.compile(r"\{(\w+)\}")


class PromptKind(str, enum.Enum):
    SYSTEM = "System"
    ACTION_SELECT_1 = "ActionSelect1"
    FINAL_ANSWER = "FinalAnswer"
    ADD_DECOMP = "AddDecomp"
    ACTION_SELECT_2 = "ActionSelect2"
    RETRIEVER_QUERY = "RetrieverQuery"
    EXTRACTOR_INPUT = "ExtractorInput"
    SELF_ANSWER = "SelfAnswer"


# kinds whose model input starts with the System prompt
CORE_KINDS = frozenset(
    {
        PromptKind.ACTION_SELECT_1,
        PromptKind.FINAL_ANSWER,
        PromptKind.ADD_DECOMP,
        PromptKind.ACTION_SELECT_2,
        PromptKind.SELF_ANSWER,
    }
)


@lru_cache(maxsize=None)
def _load(version: int) -> dict[str, str]:
    raw = resources.files(__package__).joinpath(f"templates_v{version}.json").read_text(encoding="utf-8")
    data = json.loads(raw)
    if data.get("version") != version:
        raise ValueError(f"template resource declares version {data.get('version')}, expected {version}")
    return data["templates"]


def _kind(kind) -> PromptKind:
    try:
        return PromptKind(kind)
    except ValueError:
        raise UnknownKind(f"unknown prompt kind {kind!r}") from None


def template(kind, version: int = TEMPLATE_VERSION) -> str:
    return _load(version)[_kind(kind).value]


def placeholders(kind) -> list[str]:
    return _SLOT_RE.findall(template(kind))


def _substitute(tmpl: str, slots: Mapping[str, str]) -> str:
    for name in _SLOT_RE.findall(tmpl):
        if name not in slots:
            raise MissingSlot(name)

    return _SLOT_RE.sub(lambda m: str(slots[m.group(1)]), tmpl)


def render_prompt(kind, state: Optional[QuestionState] = None, slots: Optional[Mapping[str, str]] = None) -> str:
    """Render one template.

    ``{Question_state}`` and ``{Q}`` default to the rendered state and the bare
    question text when a state is given; every other slot must be supplied.
    """
    kind = _kind(kind)
    filled: dict[str, str] = {}
    if state is not None:
        filled["Question_state"] = render_state(state)
        filled["Q"] = state.question.text
    filled.update(slots or {})
    return _substitute(template(kind), filled)


def compose_input(kind, state: QuestionState, slots: Optional[Mapping[str, str]] = None) -> str:
    """Full model input: the System prompt followed by the instruction for ``kind``."""
    kind = _kind(kind)
    if kind not in CORE_KINDS:
        return render_prompt(kind, state, slots)
    head = render_prompt(PromptKind.SYSTEM, state)
    return head + INPUT_SEPARATOR + render_prompt(kind, state, slots)


def compose_zero_shot(state: QuestionState) -> str:
    head = render_prompt(PromptKind.SYSTEM, state)
    return head + INPUT_SEPARATOR + _substitute(ZERO_SHOT_TEMPLATE, {"Q": state.question.text})


# --------------------------------------------------------------------------
# parsing

_BRACKET_CHOICE = re.compile(r"\[\s*([AB])\s*\]", re.IGNORECASE)
_BARE_CHOICE = re.compile(r"(?<![A-Za-z0-9_])([AB])(?![A-Za-z0-9_])", re.IGNORECASE)


def parse_action_choice(completion: str) -> str:
    """Return ``"A"`` or ``"B"``."""
    if not isinstance(completion, str):
        raise UnparsableChoice(f"expected text, got {type(completion).__name__}")
    m = _BRACKET_CHOICE.search(completion)
    if m is None:
        m = _BARE_CHOICE.search(completion.strip())
    if m is None:
        raise UnparsableChoice(f"no [A]/[B] choice in {completion[:80]!r}")
    return m.group(1).upper()


@dataclass(frozen=True)
class DecompPlan:
    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        entries = tuple((str(q), str(a)) for q, a in self.entries)
        if not entries:
            raise ValueError("a decomposition plan needs at least one entry")
        for q, _ in entries:
            if not q.strip():
                raise ValueError("plan entries need non-empty question text")
        object.__setattr__(self, "entries", entries)

    @property
    def first(self) -> tuple[str, str]:
        return self.entries[0]

    def __len__(self) -> int:
        return len(self.entries)


_Q_MARK = re.compile(r"\[\s*Q\s*\]", re.IGNORECASE)
_A_MARK = re.compile(r"\[\s*A\s*\]", re.IGNORECASE)
_TRAILING_NUMBER = re.compile(r"\s*\(\s*\d+\s*\)\s*$")


def parse_decomp_plan(completion: str) -> DecompPlan:
    """Extract ``(i) [Q] question [A] answer`` groups in order of appearance.

    The numbering tokens are ignored; a ``[Q]`` without ``[A]`` yields an empty
    pseudo answer.
    """
    if not isinstance(completion, str):
        raise NoDecompFound("completion is not text")
    marks = list(_Q_MARK.finditer(completion))
    entries = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(completion)
        seg = _TRAILING_NUMBER.sub("", completion[m.end():end])
        a = _A_MARK.search(seg)
        if a is None:
            q, ans = seg, ""
        else:
            q, ans = seg[: a.start()], seg[a.end():]
        q, ans = q.strip(), ans.strip()
        if q:
            entries.append((q, ans))
    if not entries:
        raise NoDecompFound(f"no [Q] segment in {completion[:80]!r}")
    return DecompPlan(tuple(entries))


def format_decomp_plan(plan: DecompPlan | list, start: int = 1) -> str:
    entries = plan.entries if isinstance(plan, DecompPlan) else plan
    parts = []
    for i, (q, a) in enumerate(entries, start=start):
        parts.append(f"({i}) [Q] {q} [A] {a}" if a else f"({i}) [Q] {q}")
    return " ".join(parts)


_FINAL = re.compile(
    r"(?:therefore\s*,?\s*)?(?:the\s+)?final\s+answer\s+is\s*[:\-]?\s*[\[\(\"'*]*\s*(yes|no)(?![A-Za-z])",
    re.IGNORECASE,
)
_YES_NO = re.compile(r"(?<![A-Za-z])(yes|no)(?![A-Za-z])", re.IGNORECASE)


def parse_final_answer(completion: str) -> Verdict:
    if not isinstance(completion, str):
        raise UnparsableVerdict("completion is not text")
    m = _FINAL.search(completion)
    if m is None:
        hits = list(_YES_NO.finditer(completion))
        if not hits:
            raise UnparsableVerdict(f"no yes/no token in {completion[:80]!r}")
        m = hits[-1]
    rationale = completion[: m.start()].strip().rstrip(",;").strip()
    return Verdict(answer=m.group(1).lower(), rationale=rationale)
