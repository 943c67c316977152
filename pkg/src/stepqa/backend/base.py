from __future__ import annotations

import abc
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..errors import DimensionMismatch, Malformed

# separator used when k extractor prompts are submitted as one fused call
FUSED_JOINER = "\n\n"


@dataclass(frozen=True)
class GenParams:
    max_new_tokens: int = 256
    num_sequences: int = 1
    deterministic: bool = True
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.max_new_tokens) < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if int(self.num_sequences) < 1:
            raise ValueError("num_sequences must be >= 1")

    def with_n(self, n: int) -> "GenParams":
        return replace(self, num_sequences=int(n))


@dataclass(frozen=True)
class Completion:
    text: str
    score: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"text": self.text}
        if self.score is not None:
            d["score"] = self.score
        return d


def _order(completions: list[Completion]) -> list[Completion]:
    if completions and all(c.score is not None for c in completions):
        # stable: equal scores keep provider order
        return sorted(completions, key=lambda c: -c.score)
    return completions


def check_embeddings(vectors, n_texts: int, dim: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.asarray(vectors, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise Malformed(f"embedding payload is not numeric: {exc}") from exc
    if arr.ndim != 2 or arr.shape[0] != n_texts:
        raise Malformed(f"expected {n_texts} vectors, got array of shape {arr.shape}")
    if arr.shape[1] < 1:
        raise Malformed("embedding dimension must be positive")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatch(f"provider returned dim {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise Malformed("embedding contains non-finite values")
    return arr


def check_texts(texts: Sequence[str]) -> list[str]:
    if isinstance(texts, str):
        raise TypeError("embed expects a list of texts, not a single string")
    texts = list(texts)
    if not texts:
        raise ValueError("embed needs at least one text")
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise ValueError("every text to embed must be non-empty")
    return texts


class Backend(abc.ABC):
    """Text generation plus embedding.

    Subclasses implement ``_complete`` (returning up to ``params.num_sequences``
    completions) and ``_embed``; the public methods validate and normalize.
    """

    dim: Optional[int] = None

    @abc.abstractmethod
    def _complete(self, prompt: str, params: GenParams) -> list[Completion]: ...

    def _complete_fused(self, prompts: list[str], params: GenParams) -> list[Completion]:
        return self._complete(FUSED_JOINER.join(prompts), params)

    def _embed(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} does not provide embeddings")

    def generate(self, prompt: str, params: Optional[GenParams] = None) -> Completion:
        params = (params or GenParams()).with_n(1)
        return self._checked(self._complete(self._check_prompt(prompt), params), 1)[0]

    def generate_n(self, prompt: str, params: Optional[GenParams] = None, n: Optional[int] = None) -> list[Completion]:
        params = params or GenParams()
        if n is not None:
            params = params.with_n(n)
        return self._checked(self._complete(self._check_prompt(prompt), params), params.num_sequences)

    def generate_fused(self, prompts: Sequence[str], params: Optional[GenParams] = None) -> Completion:
        """One completion conditioned on all ``prompts`` jointly (fusion-in-decoder style)."""
        prompts = [self._check_prompt(p) for p in prompts]
        if not prompts:
            raise ValueError("fused generation needs at least one context prompt")
        params = (params or GenParams()).with_n(1)
        return self._checked(self._complete_fused(prompts, params), 1)[0]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = check_texts(texts)
        arr = check_embeddings(self._embed(texts), len(texts), self.dim)
        if self.dim is None:
            self.dim = arr.shape[1]
        return arr

    @staticmethod
    def _check_prompt(prompt: str) -> str:
        if not isinstance(prompt, str) or not prompt:
            raise ValueError("prompt must be non-empty text")
        return prompt

    @staticmethod
    def _checked(completions: list[Completion], n: int) -> list[Completion]:
        out = []
        for c in completions:
            if isinstance(c, str):
                c = Completion(c)
            if not isinstance(c, Completion) or not isinstance(c.text, str):
                raise Malformed(f"backend produced a non-completion value: {c!r}")
            out.append(c)
        if not out:
            raise Malformed("backend returned zero completions")
        return _order(out)[:n]


class HashEmbedder:
    """Maps each text to a seeded pseudorandom unit vector.

    ``overrides`` pins specific texts to given vectors so fixtures can engineer
    nearest neighbours.
    """

    def __init__(self, dim: int = 64, seed: int = 0, overrides: Optional[Mapping[str, Sequence[float]]] = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.seed = int(seed)
        self.overrides = {k: np.asarray(v, dtype=np.float64) for k, v in (overrides or {}).items()}
        for k, v in self.overrides.items():
            if v.shape != (self.dim,):
                raise DimensionMismatch(f"override for {k!r} has shape {v.shape}, expected ({self.dim},)")

    def vector(self, text: str) -> np.ndarray:
        if text in self.overrides:
            return self.overrides[text].copy()
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / math.sqrt(float(v @ v))

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = check_texts(texts)
        return np.stack([self.vector(t) for t in texts])
