"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers
from typing import Iterable, Mapping

from ..qstate import Question
from ..retrieval import CorpusDoc, make_doc, validate_corpus


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_questions(X) -> list[Question]:
    """Accept strings, Question objects, or mappings with ``question`` (and optional ``qid``)."""
    if isinstance(X, (str, Question)):
        X = [X]
    out = []
    for i, x in enumerate(X):
        if isinstance(x, Question):
            out.append(x)
        elif isinstance(x, str):
            out.append(Question(id=f"q{i}", text=x))
        elif isinstance(x, Mapping):
            out.append(Question(id=str(x.get("qid", f"q{i}")), text=x["question"]))
        else:
            raise TypeError(f"cannot interpret {type(x).__name__} as a question")
    if not out:
        raise ValueError("need at least one question")
    return out


def check_corpus(corpus: Iterable) -> list[CorpusDoc]:
    """Accept CorpusDoc objects or ``{doc_id, title, paragraphs}`` mappings."""
    docs = []
    for d in corpus:
        if isinstance(d, CorpusDoc):
            docs.append(d)
        else:
            docs.append(make_doc(d["doc_id"], d.get("title", ""), d["paragraphs"]))
    validate_corpus(docs)
    return docs
