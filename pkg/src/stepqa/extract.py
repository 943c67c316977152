"""Resolve a pending decomposition: retrieve-then-read, or answer it directly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .backend import Backend, GenParams
from .errors import NoPending, ReaderFailure, RetrievalEmpty
from .prompts import PromptKind, compose_input, render_prompt
from .qstate import DecompStep, QuestionState
from .retrieval import CorpusIndex, RetrievalConfig, RetrievalHit


@dataclass(frozen=True)
class ExtractionRequest:
    decomp: str
    pseudo_answer: str
    paragraphs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.paragraphs:
            raise RetrievalEmpty("extraction needs at least one paragraph")

    def prompts(self) -> list[str]:
        return [
            render_prompt(
                PromptKind.EXTRACTOR_INPUT,
                slots={"decomp": self.decomp, "pseudo_answer": self.pseudo_answer, "paragraph": text},
            )
            for _, text in self.paragraphs
        ]


def _pending(state: QuestionState) -> DecompStep:
    step = state.pending_step
    if step is None:
        raise NoPending("state has no pending decomposition")
    return step


def retriever_query(state: QuestionState) -> str:
    step = _pending(state)
    return render_prompt(PromptKind.RETRIEVER_QUERY, state, {"Decomp": step.question_text})


def retrieve_and_extract(
    state: QuestionState,
    index: Optional[CorpusIndex],
    embedder,
    reader: Backend,
    cfg: RetrievalConfig = RetrievalConfig(),
    params: Optional[GenParams] = None,
) -> tuple[str, list[RetrievalHit]]:
    """Retrieve the top-k paragraphs for the pending step and read them in one fused call.

    Every paragraph gets its own extractor prompt carrying the same decomposition
    and pseudo answer; the reader sees all of them at once and returns one fact.
    """
    step = _pending(state)
    if index is None:
        raise RetrievalEmpty("no corpus index configured")
    hits = index.retrieve(retriever_query(state), embedder, cfg)
    if not hits:
        raise RetrievalEmpty(f"no paragraphs retrieved for {step.question_text!r}")
    request = ExtractionRequest(
        decomp=step.question_text,
        pseudo_answer=step.pseudo_answer or "",
        paragraphs=tuple((h.para_id, index.paragraph(h.para_id).text) for h in hits),
    )
    fact = reader.generate_fused(request.prompts(), params).text.strip()
    if not fact:
        raise ReaderFailure(f"reader returned an empty fact for {step.question_text!r}")
    return fact, hits


def self_answer(state: QuestionState, core: Backend, params: Optional[GenParams] = None) -> str:
    step = _pending(state)
    prompt = compose_input(PromptKind.SELF_ANSWER, state, {"Decomp": step.question_text})
    return core.generate(prompt, params).text.strip()
