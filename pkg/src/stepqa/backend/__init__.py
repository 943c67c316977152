from __future__ import annotations

from .base import FUSED_JOINER, Backend, Completion, GenParams, HashEmbedder
from .remote import RemoteBackend
from .scripted import CallableBackend, RecordingBackend, ScriptedBackend, load_structured, normalize_prompt

__all__ = [
    "Backend",
    "CallableBackend",
    "Completion",
    "FUSED_JOINER",
    "GenParams",
    "HashEmbedder",
    "RecordingBackend",
    "RemoteBackend",
    "ScriptedBackend",
    "backend_from_spec",
    "load_structured",
    "normalize_prompt",
]


def backend_from_spec(spec: str, timeout: float = 60.0, retries: int = 2) -> Backend:
    """``script:<path>`` loads a scripted manifest; anything else is an HTTP endpoint URL."""
    if spec.startswith("script:"):
        return ScriptedBackend.load(spec[len("script:"):])
    if spec.startswith(("http://", "https://")):
        return RemoteBackend(spec, timeout=timeout, retries=retries)
    raise ValueError(f"backend must be an http(s) URL or script:<path>, got {spec!r}")
