"""Shared test doubles: a rule-driven core model and fixture loaders."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Callable, Optional

from stepqa.backend import CallableBackend, HashEmbedder, ScriptedBackend
from stepqa.prompts import INPUT_SEPARATOR
from stepqa.retrieval import CorpusIndex, load_corpus

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
FOLIO_QUESTION = "Could Shakespeare's First Folio include a play about Abraham Lincoln's assassination?"

STEP_LINE = re.compile(r"^\((\d+)\) \[Q\] (.*?)(?: \[A\] (.*))?$")
VARIANT = re.compile(r"strategy (\d+) round (\d+)")


def folio_backend() -> ScriptedBackend:
    return ScriptedBackend.load(FIXTURES / "folio_script.json")


def folio_index(embedder) -> CorpusIndex:
    return CorpusIndex.build(load_corpus(FIXTURES / "folio_corpus.jsonl"), embedder)


def split_prompt(prompt: str) -> tuple[list[tuple[str, Optional[str]]], str]:
    """Return ([(question_text, fact or None), ...], instruction) for a core-model prompt."""
    body, instruction = prompt.rsplit(INPUT_SEPARATOR, 1)
    state_text = body.split("</s>", 1)[1]
    steps = []
    for line in state_text.split("\n")[1:]:
        m = STEP_LINE.match(line)
        if m:
            steps.append((m.group(2), m.group(3)))
    return steps, instruction


def strategy_path(steps) -> tuple[int, ...]:
    """Variant numbers chosen at each round, read back from the step texts."""
    out = []
    for q, _ in steps:
        m = VARIANT.search(q)
        out.append(int(m.group(1)) if m else -1)
    return tuple(out)


class RuleCore:
    """A core model driven by simple rules over the rendered state.

    - ActionSelect1 answers "[B]" until ``rounds`` steps exist, then "[A]".
    - AddDecomp returns ``width`` distinct plans (a beam); greedy calls get the first.
    - ActionSelect2 answers ``"[A]" if retrieve else "[B]"``.
    - FinalAnswer is decided by ``decide(path)`` where ``path`` lists the chosen
      variant at each round.
    """

    def __init__(
        self,
        rounds: int = 2,
        width: int = 4,
        retrieve: bool = False,
        decide: Callable[[tuple[int, ...]], str] = lambda path: "yes",
        beam_scores: bool = True,
    ):
        self.rounds = rounds
        self.width = width
        self.retrieve = retrieve
        self.decide = decide
        self.beam_scores = beam_scores
        self.prompts: list[str] = []

    def plan(self, round_no: int, variant: int) -> str:
        return f"({round_no}) [Q] What is strategy {variant} round {round_no}? [A] guess {variant}"

    def __call__(self, prompt: str, n: int):
        self.prompts.append(prompt)
        if "Based on the following context" in prompt:
            decomp = re.search(r'answer the question: "(.*?)"', prompt).group(1)
            return f"extracted fact for {decomp}"
        steps, instruction = split_prompt(prompt)
        if instruction.startswith("Synthesis"):
            return "[A]" if len(steps) >= self.rounds else "[B]"
        if instruction.startswith("Besides"):
            r = len(steps) + 1
            beam = [self.plan(r, v) for v in range(self.width)]
            if self.beam_scores:
                return [{"text": t, "score": -float(i)} for i, t in enumerate(beam)]
            return beam
        if instruction.startswith("Does the sub-question"):
            return "[A]" if self.retrieve else "[B]"
        if instruction.startswith("Based on the sub-questions"):
            return f"self answer to {steps[-1][0]}"
        if instruction.startswith("Conclude"):
            verdict = self.decide(strategy_path(steps))
            return f"Reasoning steps: followed strategy {strategy_path(steps)}. Therefore, the final answer is: {verdict}"
        if instruction.startswith("Answer yes or no"):
            return self.decide(())
        raise AssertionError(f"unexpected prompt {prompt!r}")

    def backend(self, embedder: Optional[HashEmbedder] = None) -> CallableBackend:
        return CallableBackend(self, embedder=embedder)
