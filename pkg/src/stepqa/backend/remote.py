"""HTTP client for an inference server speaking the two-endpoint protocol.

``POST /generate``  {prompt, max_new_tokens, num_sequences, deterministic, ...}
                    -> {completions: [{text, score?}, ...]}
``POST /embed``     {texts: [...]} -> {dim, vectors: [[...], ...]}

For fused extraction ``prompt`` is a list of per-context prompts.
"""

from __future__ import annotations

import logging
import time
from typing import Any, Optional

import httpx
import numpy as np

from ..errors import DimensionMismatch, Malformed, Transport
from .base import Backend, Completion, GenParams

log = logging.getLogger(__name__)


class RemoteBackend(Backend):
    def __init__(self, url: str, timeout: float = 60.0, retries: int = 2, client: Optional[httpx.Client] = None):
        self.url = url.rstrip("/")
        self.timeout = float(timeout)
        self.retries = max(0, int(retries))
        self._client = client or httpx.Client(timeout=self.timeout)
        self.dim = None

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, body: dict) -> Any:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url + path, json=body, timeout=self.timeout)
                resp.raise_for_status()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last = exc
                log.warning("POST %s failed (attempt %d/%d): %s", path, attempt + 1, self.retries + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(0.1 * 2**attempt, 2.0))
                continue
            try:
                return resp.json()
            except ValueError as exc:
                raise Malformed(f"{path}: response is not JSON") from exc
        raise Transport(f"{self.url}{path}: {last}") from last

    def _body(self, prompt, params: GenParams) -> dict:
        body = dict(params.extra)
        body.update(
            prompt=prompt,
            max_new_tokens=params.max_new_tokens,
            num_sequences=params.num_sequences,
            deterministic=params.deterministic,
        )
        return body

    @staticmethod
    def _parse_completions(data) -> list[Completion]:
        try:
            items = data["completions"]
            out = []
            for it in items:
                score = it.get("score")
                out.append(Completion(str(it["text"]), None if score is None else float(score)))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise Malformed(f"/generate response has unexpected shape: {exc}") from exc
        if not out:
            raise Malformed("/generate returned an empty completion list")
        return out

    def _complete(self, prompt: str, params: GenParams) -> list[Completion]:
        return self._parse_completions(self._post("/generate", self._body(prompt, params)))

    def _complete_fused(self, prompts: list[str], params: GenParams) -> list[Completion]:
        return self._parse_completions(self._post("/generate", self._body(list(prompts), params)))

    def _embed(self, texts: list[str]) -> np.ndarray:
        data = self._post("/embed", {"texts": texts})
        try:
            dim = int(data["dim"])
            vectors = data["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise Malformed(f"/embed response has unexpected shape: {exc}") from exc
        if any(len(v) != dim for v in vectors):
            raise DimensionMismatch(f"/embed declared dim {dim} but vectors disagree")
        if self.dim is not None and dim != self.dim:
            raise DimensionMismatch(f"/embed returned dim {dim}, earlier calls returned {self.dim}")
        return np.asarray(vectors, dtype=np.float64)
