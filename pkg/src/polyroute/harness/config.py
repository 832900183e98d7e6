"""Run configuration file and the provider factory.

A config is a JSON object; every key is optional and falls back to the
offline mock setup below.  Provider entries pick a ``type``: ``mock``,
``echo`` or ``openai`` for chat, ``mock`` or ``chat`` for translation,
``hashed`` or ``openai`` for embeddings, ``overlap`` or ``openai`` for the
judge.  Credentials are read from ``PR_<PROVIDER>_KEY`` environment variables
unless ``key_env`` names another variable.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from polyroute.backends import (
    ChatBackend,
    ChatTranslator,
    EchoChat,
    Embedder,
    ExtractiveMockChat,
    HashedEmbedder,
    OpenAIChat,
    OpenAIEmbedder,
    ResponseCache,
    TaggingTranslator,
    Translator,
)
from polyroute.config_space import ConfigurationSpace
from polyroute.errors import InvalidConfiguration
from polyroute.evaluation import OverlapJudge
from polyroute.langsim import DistanceTable, PivotResolver
from polyroute.selector.train import Hyper
from polyroute.strategies import Providers, PromptTemplates, ShotMode

DEFAULTS = {
    "space": {},
    "seed": 0,
    "metric": "mlqa_f1",
    "temperature": 1.0,
    "cache_dir": None,
    "context": "retrieval",
    "shots": {"kind": "few", "n": 3, "seed": 0},
    "chunk": {"max_chars": 400, "overlap": 50},
    "k": 3,
    "concurrency": 4,
    "templates": None,
    "distances": None,
    "selector": {},
    "providers": {
        "chat": {"*": {"type": "mock"}},
        "translator": {"type": "mock"},
        "embeddings": {},
        "judge": {"type": "overlap"},
        "backbone": {"type": "hashed", "dimension": 64, "provider": "backbone"},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("chat", "embeddings"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, overrides: Optional[dict] = None) -> "RunConfig":
        raw = copy.deepcopy(DEFAULTS)
        if path is not None:
            raw = _merge(raw, json.loads(Path(path).read_text(encoding="utf-8")))
        if overrides:
            raw = _merge(raw, overrides)
        if raw["metric"] not in ("mlqa_f1", "gptannotator_f1"):
            raise InvalidConfiguration(f"unknown metric {raw['metric']!r}")
        if raw["context"] not in ("retrieval", "gold"):
            raise InvalidConfiguration("context must be 'retrieval' or 'gold'")
        return cls(raw)

    def __getitem__(self, key):
        return self.raw[key]

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    @property
    def space(self) -> ConfigurationSpace:
        return ConfigurationSpace(**{k: tuple(v) for k, v in self.raw["space"].items()})

    @property
    def shots(self) -> ShotMode:
        s = self.raw["shots"]
        return ShotMode.zero() if s["kind"] == "zero" else ShotMode.few(s.get("n", 3), s.get("seed", 0))

    @property
    def hyper(self) -> Hyper:
        return Hyper.from_dict({"seed": self.raw["seed"], "temperature": self.raw["temperature"],
                                **self.raw["selector"]})

    def cache(self) -> Optional[ResponseCache]:
        d = self.raw.get("cache_dir")
        return ResponseCache(d) if d else None


def _chat(spec: dict, name: str, cache) -> ChatBackend:
    kind = spec.get("type", "mock")
    pid = spec.get("provider", name if kind == "openai" else kind)
    if kind == "mock":
        return ExtractiveMockChat(pid, cache)
    if kind == "echo":
        return EchoChat(pid, cache)
    if kind == "openai":
        return OpenAIChat(pid, spec["base_url"], spec.get("model"), spec.get("key_env"), cache,
                          attempts=spec.get("attempts", 3), base_delay=spec.get("base_delay", 1.0),
                          max_concurrency=spec.get("max_concurrency", 8))
    raise InvalidConfiguration(f"unknown chat provider type {kind!r}")


def _embedder(spec: dict, name: str, cache) -> Embedder:
    kind = spec.get("type", "hashed")
    pid = spec.get("provider", name)
    if kind == "hashed":
        return HashedEmbedder(pid, spec.get("dimension", 64), cache, spec.get("salt", ""))
    if kind == "openai":
        return OpenAIEmbedder(pid, spec["base_url"], spec.get("model", name), spec["dimension"],
                              spec.get("key_env"), cache, attempts=spec.get("attempts", 3),
                              base_delay=spec.get("base_delay", 1.0))
    raise InvalidConfiguration(f"unknown embedding provider type {kind!r}")


@dataclass
class Built:
    providers: Providers
    judge: ChatBackend
    backbone: Embedder
    cache: Optional[ResponseCache]

    def backends(self) -> list:
        seen = {}
        for b in [*self.providers.chat.values(), self.providers.translator, *self.providers.embedders.values(),
                  self.judge, self.backbone]:
            if b is not None:
                seen[id(b)] = b
                inner = getattr(b, "chat", None)
                if inner is not None:
                    seen[id(inner)] = inner
        return list(seen.values())

    def network_calls(self) -> int:
        return sum(b.network_calls for b in self.backends())


def build(cfg: RunConfig) -> Built:
    cache = cfg.cache()
    p = cfg["providers"]
    space = cfg.space
    chat = {name: _chat(spec, name, cache) for name, spec in p["chat"].items()}
    emb_specs = dict(p.get("embeddings") or {})
    embedders = {e: _embedder(emb_specs.get(e, {"type": "hashed"}), e, cache) for e in space.embeddings}
    tspec = p.get("translator") or {"type": "mock"}
    if tspec.get("type", "mock") == "mock":
        translator: Translator = TaggingTranslator(tspec.get("provider", "mock-mt"), cache)
    elif tspec["type"] == "chat":
        model = tspec["model"]
        backend = chat.get(model) or chat.get("*")
        if backend is None:
            raise InvalidConfiguration(f"translator model {model!r} has no chat backend")
        translator = ChatTranslator(backend, model, tspec.get("provider"), cache)
    else:
        raise InvalidConfiguration(f"unknown translator type {tspec['type']!r}")
    jspec = p.get("judge") or {"type": "overlap"}
    if jspec.get("type", "overlap") == "overlap":
        judge: ChatBackend = OverlapJudge(jspec.get("provider", "overlap-judge"), jspec.get("yes_at", 0.5), cache)
    else:
        judge = _chat(jspec, "judge", cache)
    backbone = _embedder(p.get("backbone") or {"type": "hashed"}, "backbone", None)
    table = DistanceTable.from_json(cfg["distances"]) if cfg["distances"] else DistanceTable.packaged()
    providers = Providers(
        chat=chat,
        translator=translator,
        pivots=PivotResolver(table),
        embedders=embedders,
        templates=PromptTemplates.load(cfg["templates"]),
        k=cfg["k"],
    )
    return Built(providers, judge, backbone, cache)
