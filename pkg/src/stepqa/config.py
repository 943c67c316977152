"""Settings from a YAML/JSON file, overridden by ``STEPQA_*`` environment variables."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Mapping, Optional

from .backend import GenParams, load_structured
from .engine import EngineConfig, RunMode
from .explorer import ExploreConfig
from .retrieval import RetrievalConfig

ENV_PREFIX = "STEPQA_"
# nested sections accepted in config files; keys are flattened onto Settings
_SECTIONS = ("backend_config", "retrieval", "engine", "explore", "generation")


@dataclass
class Settings:
    backend: Optional[str] = None
    timeout: float = 60.0
    retries: int = 2
    mode: str = "dere"
    max_rounds: int = 8
    k: int = 10
    k_doc: int = 100
    n: int = 4
    leaf_cap: int = 16
    branch_depth: int = 2
    max_new_tokens: int = 256
    deterministic: bool = True

    def update(self, values: Mapping[str, object]) -> "Settings":
        fields = {f.name: f for f in dataclasses.fields(self)}
        for key, raw in values.items():
            key = {"endpoint": "backend", "url": "backend"}.get(key, key)
            if key not in fields or raw is None:
                continue
            setattr(self, key, _coerce(fields[key].type, raw))
        return self

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            max_rounds=self.max_rounds,
            retrieval=RetrievalConfig(k_doc=self.k_doc, k=self.k),
            mode=RunMode(self.mode),
            gen=GenParams(max_new_tokens=self.max_new_tokens, deterministic=self.deterministic),
        )

    def explore_config(self) -> ExploreConfig:
        return ExploreConfig(n=self.n, leaf_cap=self.leaf_cap, branch_depth=self.branch_depth)


def _coerce(type_name, raw):
    t = str(type_name)
    if "bool" in t:
        if isinstance(raw, str):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if "float" in t:
        return float(raw)
    if "int" in t:
        return int(raw)
    return str(raw)


def _flatten(data: Mapping) -> dict:
    flat = {}
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, Mapping):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def load_settings(path: Optional[str] = None, env: Optional[Mapping[str, str]] = None) -> Settings:
    settings = Settings()
    path = path or (env or os.environ).get(ENV_PREFIX + "CONFIG")
    if path:
        settings.update(_flatten(load_structured(path) or {}))
    env = os.environ if env is None else env
    settings.update({k[len(ENV_PREFIX):].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX) and k != ENV_PREFIX + "CONFIG"})
    return settings
