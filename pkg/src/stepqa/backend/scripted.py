"""Deterministic backends for tests and replays."""

from __future__ import annotations

import json
import os
import threading
from collections import defaultdict
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from ..errors import ScriptMiss
from .base import FUSED_JOINER, Backend, Completion, GenParams, HashEmbedder

MANIFEST_VERSION = 1

Response = Union[str, Completion, list]


def normalize_prompt(prompt: str) -> str:
    return prompt.replace("\r\n", "\n").replace("\r", "\n").rstrip()


def _as_completions(resp) -> list[Completion]:
    # a list response is an n-best beam; anything else is a single completion
    items = resp if isinstance(resp, list) else [resp]
    out = []
    for it in items:
        if isinstance(it, Completion):
            out.append(it)
        elif isinstance(it, str):
            out.append(Completion(it))
        elif isinstance(it, Mapping):
            out.append(Completion(str(it["text"]), it.get("score")))
        else:
            raise TypeError(f"unsupported scripted response {it!r}")
    return out


def _common_prefix(a: str, b: str) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class ScriptedBackend(Backend):
    """Replays canned completions keyed on the exact (normalized) prompt.

    Each prompt owns a queue of responses consumed in order; once a single
    response remains it is returned for every further identical prompt.
    Embeddings come from an explicit table, falling back to ``embedder`` when
    one is configured.
    """

    def __init__(
        self,
        script: Mapping[str, Sequence[Response]] | Sequence[tuple[str, Sequence[Response]]] = (),
        embeddings: Optional[Mapping[str, Sequence[float]]] = None,
        embedder: Optional[HashEmbedder] = None,
        dim: Optional[int] = None,
    ):
        items = script.items() if isinstance(script, Mapping) else script
        self._script: dict[str, list] = defaultdict(list)
        for prompt, responses in items:
            if isinstance(responses, (str, Completion)):
                responses = [responses]
            self._script[normalize_prompt(prompt)].extend(responses)
        self._script = dict(self._script)
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self._table = {k: np.asarray(v, dtype=np.float64) for k, v in (embeddings or {}).items()}
        self._embedder = embedder
        if dim is None and self._table:
            dim = len(next(iter(self._table.values())))
        if dim is None and embedder is not None:
            dim = embedder.dim
        self.dim = dim
        self.calls: list[str] = []

    def reset(self) -> None:
        with self._lock:
            self._cursor.clear()
            self.calls.clear()

    def unused(self) -> list[str]:
        return [p for p in self._script if p not in self._cursor]

    def _next(self, prompt: str):
        key = normalize_prompt(prompt)
        with self._lock:
            queue = self._script.get(key)
            if not queue:
                raise ScriptMiss(prompt, self._nearest(key))
            pos = self._cursor.get(key, 0)
            self._cursor[key] = pos + 1
            self.calls.append(key)
            return queue[min(pos, len(queue) - 1)]

    def _nearest(self, key: str) -> Optional[str]:
        best, best_len = None, -1
        for p in self._script:
            n = _common_prefix(p, key)
            if n > best_len:
                best, best_len = p[:n], n
        return best

    def _complete(self, prompt: str, params: GenParams) -> list[Completion]:
        return _as_completions(self._next(prompt))[: params.num_sequences]

    def _embed(self, texts: list[str]) -> np.ndarray:
        rows = []
        for t in texts:
            if t in self._table:
                rows.append(self._table[t])
            elif self._embedder is not None:
                rows.append(self._embedder.vector(t))
            else:
                raise ScriptMiss(t, None)
        return np.stack(rows)

    # manifest I/O --------------------------------------------------------

    @classmethod
    def from_manifest(cls, data: Mapping[str, Any]) -> "ScriptedBackend":
        version = data.get("version", MANIFEST_VERSION)
        if version != MANIFEST_VERSION:
            raise ValueError(f"unsupported script manifest version {version}")
        entries = [(e["prompt"], e["responses"]) for e in data.get("entries", [])]
        emb = data.get("embeddings") or {}
        fallback = emb.get("fallback")
        embedder = None
        if fallback is not None:
            embedder = HashEmbedder(dim=int(emb["dim"]), seed=int(fallback.get("seed", 0)))
        return cls(entries, embeddings=emb.get("table"), embedder=embedder, dim=emb.get("dim"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScriptedBackend":
        return cls.from_manifest(load_structured(path))


def load_structured(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        if str(path).endswith((".yaml", ".yml")):
            return yaml.safe_load(fh)
        return json.load(fh)


class CallableBackend(Backend):
    """Generation computed by a Python callable ``fn(prompt, n)``.

    ``fn`` may return a string, a Completion, or a list of either (an n-best
    list). Thread-safety is the callable's responsibility.
    """

    def __init__(self, fn: Callable[[str, int], Any], embedder: Optional[HashEmbedder] = None):
        self.fn = fn
        self._embedder = embedder
        self.dim = embedder.dim if embedder is not None else None

    def _complete(self, prompt: str, params: GenParams) -> list[Completion]:
        return _as_completions(self.fn(prompt, params.num_sequences))[: params.num_sequences]

    def _embed(self, texts: list[str]) -> np.ndarray:
        if self._embedder is None:
            return super()._embed(texts)
        return self._embedder.embed(texts)


class RecordingBackend(Backend):
    """Wraps another backend and records every exchange as a script manifest."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.dim = inner.dim
        self._entries: list[tuple[str, Any]] = []
        self._table: dict[str, list[float]] = {}
        self._lock = threading.Lock()

    def _record(self, prompt: str, completions: list[Completion], beam: bool) -> None:
        resp = [c.to_dict() if c.score is not None else c.text for c in completions]
        with self._lock:
            self._entries.append((prompt, resp if beam else resp[0]))

    def generate(self, prompt, params=None):
        c = self.inner.generate(prompt, params)
        self._record(prompt, [c], beam=False)
        return c

    def generate_n(self, prompt, params=None, n=None):
        cs = self.inner.generate_n(prompt, params, n)
        self._record(prompt, cs, beam=True)
        return cs

    def generate_fused(self, prompts, params=None):
        c = self.inner.generate_fused(prompts, params)
        self._record(FUSED_JOINER.join(prompts), [c], beam=False)
        return c

    def _complete(self, prompt, params):  # pragma: no cover - public methods are overridden
        return self.inner._complete(prompt, params)

    def embed(self, texts):
        arr = self.inner.embed(texts)
        self.dim = arr.shape[1]
        with self._lock:
            for t, v in zip(texts, arr):
                self._table[t] = [float(x) for x in v]
        return arr

    def manifest(self) -> dict:
        grouped: dict[str, list] = {}
        for prompt, resp in self._entries:
            grouped.setdefault(normalize_prompt(prompt), []).append(resp)
        out: dict[str, Any] = {
            "version": MANIFEST_VERSION,
            "entries": [{"prompt": p, "responses": r} for p, r in grouped.items()],
        }
        if self._table:
            out["embeddings"] = {"dim": self.dim, "table": dict(self._table), "fallback": None}
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=1, ensure_ascii=False)
            fh.write("\n")
