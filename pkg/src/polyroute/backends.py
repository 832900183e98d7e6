"""Chat, translation, judge and embedding clients with a persistent response cache.

Every backend routes its uncached work through ``_network`` so that
``network_calls`` counts exactly the requests that left the process (or, for
mocks, that would have).  Mock backends are pure functions of their inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import httpx
import numpy as np

from polyroute.config_space import LanguageTag
from polyroute.errors import (
    BackendUnavailable,
    InvalidInput,
    InvalidJob,
    ProtocolError,
    RateLimited,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 256


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInput("temperature must be >= 0")
        if not self.system_text or not self.user_text:
            raise InvalidInput("chat texts must be non-empty")


@dataclass(frozen=True)
class TranslationJob:
    text: str
    source_lang: LanguageTag
    target_lang: LanguageTag

    def __post_init__(self):
        if self.source_lang.code == self.target_lang.code:
            raise InvalidJob(f"source and target are both {self.source_lang.code!r}")


@dataclass(frozen=True)
class EmbeddingVector:
    provider_id: str
    dimension: int
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.dimension:
            raise ProtocolError(f"expected {self.dimension} values, got {len(self.values)}")
        if not all(np.isfinite(self.values)):
            raise ProtocolError("embedding has non-finite entries")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class CacheEntry:
    key: str
    response: object
    created_at: float


def cache_key(provider: str, model: str, payload: Mapping) -> str:
    canonical = json.dumps(
        {"provider": provider, "model": model, "payload": payload},
        sort_keys=True, ensure_ascii=False, separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSONL store, one file per provider, with an in-memory index."""

    def __init__(self, directory: Optional[os.PathLike] = None):
        self.directory = Path(directory) if directory is not None else None
        self._index: dict[str, dict[str, CacheEntry]] = {}
        self._lock = threading.Lock()

    def _path(self, provider: str) -> Optional[Path]:
        if self.directory is None:
            return None
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", provider)
        return self.directory / f"{safe}.jsonl"

    def _load(self, provider: str) -> dict[str, CacheEntry]:
        idx = self._index.get(provider)
        if idx is not None:
            return idx
        idx = {}
        path = self._path(provider)
        if path is not None and path.exists():
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        # torn final line from a crash
                        log.warning("skipping corrupt cache line in %s", path)
                        continue
                    idx[rec["key"]] = CacheEntry(rec["key"], rec["response"], rec["created_at"])
        self._index[provider] = idx
        return idx

    def get(self, provider: str, key: str) -> Optional[CacheEntry]:
        with self._lock:
            return self._load(provider).get(key)

    def put(self, provider: str, key: str, response) -> CacheEntry:
        entry = CacheEntry(key, response, time.time())
        with self._lock:
            idx = self._load(provider)
            if key in idx:
                return idx[key]
            idx[key] = entry
            path = self._path(provider)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                with path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(entry), ensure_ascii=False, sort_keys=True) + "\n")
        return entry


_tally = threading.local()


def thread_tally() -> tuple[int, int]:
    """``(network_calls, cache_hits)`` made by the current thread over all backends."""
    return getattr(_tally, "calls", 0), getattr(_tally, "hits", 0)


class Backend:
    """Shared caching, call counting and concurrency cap."""

    def __init__(self, provider_id: str, cache: Optional[ResponseCache] = None, max_concurrency: int = 8):
        self.provider_id = provider_id
        self.cache = cache
        self.network_calls = 0
        self.cache_hits = 0
        self._counter_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self.last_was_cache_hit = False

    def _cached(self, model: str, payload: Mapping, compute: Callable[[], object]):
        key = cache_key(self.provider_id, model, payload)
        if self.cache is not None:
            hit = self.cache.get(self.provider_id, key)
            if hit is not None:
                with self._counter_lock:
                    self.cache_hits += 1
                _tally.hits = getattr(_tally, "hits", 0) + 1
                self.last_was_cache_hit = True
                return hit.response
        with self._slots:
            with self._counter_lock:
                self.network_calls += 1
            _tally.calls = getattr(_tally, "calls", 0) + 1
            response = compute()
        self.last_was_cache_hit = False
        if self.cache is not None:
            self.cache.put(self.provider_id, key, response)
        return response


def with_retries(send: Callable[[], httpx.Response], attempts: int = 3, base_delay: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep, rng: Optional[random.Random] = None) -> httpx.Response:
    """Send with exponential backoff and jitter; maps exhaustion to typed errors."""
    rng = rng or random.Random()
    last_exc: Optional[Exception] = None
    rate_limited = False
    for attempt in range(attempts):
        try:
            resp = send()
        except httpx.HTTPError as exc:
            last_exc, rate_limited = exc, False
        else:
            if resp.status_code == 429:
                rate_limited = True
                last_exc = None
            elif resp.status_code >= 500:
                rate_limited = False
                last_exc = BackendUnavailable(f"HTTP {resp.status_code}")
            elif resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            else:
                return resp
        if attempt + 1 < attempts:
            sleep(base_delay * (2 ** attempt) * (1.0 + rng.random()))
    if rate_limited:
        raise RateLimited(f"rate limited after {attempts} attempts")
    raise BackendUnavailable(f"request failed after {attempts} attempts: {last_exc}")


def _credential(env_var: Optional[str]) -> Optional[str]:
    if not env_var:
        return None
    return os.environ.get(env_var)


def provider_env_var(provider: str) -> str:
    return "PR_" + re.sub(r"[^A-Z0-9]", "_", provider.upper()) + "_KEY"


# ---------------------------------------------------------------- chat


class ChatBackend(Backend):
    def complete(self, req: ChatRequest) -> str:
        payload = {
            "system": req.system_text,
            "user": req.user_text,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        return self._cached(req.model_id, payload, lambda: self._complete(req))

    def _complete(self, req: ChatRequest) -> str:
        raise NotImplementedError


class EchoChat(ChatBackend):
    """Returns the user text unchanged."""

    def __init__(self, provider_id: str = "echo", cache=None, **kw):
        super().__init__(provider_id, cache, **kw)

    def _complete(self, req):
        return req.user_text


class FixtureChat(ChatBackend):
    """Canned answers keyed by request hash, user text, or a callable."""

    def __init__(self, table: Mapping[str, str] | Callable[[ChatRequest], str], provider_id: str = "fixture",
                 default: Optional[str] = None, cache=None, **kw):
        super().__init__(provider_id, cache, **kw)
        self.table = table
        self.default = default

    @staticmethod
    def request_hash(req: ChatRequest) -> str:
        return cache_key("fixture", req.model_id, {"system": req.system_text, "user": req.user_text})

    def _complete(self, req):
        if callable(self.table):
            return self.table(req)
        for k in (self.request_hash(req), req.user_text):
            if k in self.table:
                return self.table[k]
        if self.default is not None:
            return self.default
        raise ProtocolError("no fixture for request")


_WORD_RE = re.compile(r"\w+", re.UNICODE)


def _stable_int(*parts: str) -> int:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class ExtractiveMockChat(ChatBackend):
    """Offline stand-in for a QA model.

    Answers a QA prompt with a short span from the context sentence that
    overlaps most with the question; span length and offset depend on the
    model id so different models score differently.  For aggregation prompts
    it returns one of the numbered candidates.
    """

    def __init__(self, provider_id: str = "mock", cache=None, **kw):
        super().__init__(provider_id, cache, **kw)

    def _complete(self, req):
        text = req.user_text
        section = text.rsplit("### Task", 1)[-1]
        cands = re.findall(r"^\s*\[(\d+)\]\s*(.+)$", section, flags=re.M)
        if cands:
            pick = _stable_int(req.model_id, section) % len(cands)
            return cands[pick][1].strip()
        ctx = _between(section, "Context:", "Question:")
        question = section.split("Question:", 1)[-1].split("Answer:", 1)[0]
        if not ctx.strip():
            return "unknown"
        qwords = {w.lower() for w in _WORD_RE.findall(question)}
        sentences = [s for s in re.split(r"(?<=[.!?।])\s+", ctx.strip()) if s.strip()]
        best = max(sentences, key=lambda s: (len(qwords & {w.lower() for w in _WORD_RE.findall(s)}), -len(s)))
        words = best.split()
        seed = _stable_int(req.model_id, question)
        span = 1 + seed % 4 + (len(req.model_id) % 2)
        novel = [i for i, w in enumerate(words) if w.lower().strip(".,;:!?") not in qwords]
        start = novel[(seed >> 8) % len(novel)] if novel else 0
        return " ".join(words[start:start + span]).strip()


def _between(text: str, a: str, b: str) -> str:
    if a not in text:
        return ""
    rest = text.split(a, 1)[1]
    return rest.split(b, 1)[0]


class OpenAIChat(ChatBackend):
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, provider_id: str, base_url: str, model_name: Optional[str] = None,
                 key_env: Optional[str] = None, cache=None, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None, attempts: int = 3,
                 base_delay: float = 1.0, sleep: Callable[[float], None] = time.sleep, **kw):
        super().__init__(provider_id, cache, **kw)
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.key_env = key_env or provider_env_var(provider_id)
        self.attempts = attempts
        self.base_delay = base_delay
        self.sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self):
        key = _credential(self.key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _complete(self, req):
        body = {
            "model": self.model_name or req.model_id,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        resp = with_retries(
            lambda: self._client.post(f"{self.base_url}/chat/completions", json=body, headers=self._headers()),
            self.attempts, self.base_delay, self.sleep,
        )
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat response: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError("chat response content is not text")
        return content.strip()


# ---------------------------------------------------------------- translation


class Translator(Backend):
    def translate(self, job: TranslationJob) -> str:
        payload = {"text": job.text, "source": job.source_lang.code, "target": job.target_lang.code}
        return self._cached("mt", payload, lambda: self._translate(job))

    def _translate(self, job: TranslationJob) -> str:
        raise NotImplementedError


def translation_tag(source: str, target: str) -> str:
    return f"⟦{source}→{target}⟧"


class TaggingTranslator(Translator):
    """Reversible mock: prefixes ``⟦s→g⟧`` or strips the inverse tag."""

    def __init__(self, provider_id: str = "mock-mt", cache=None, fail_on: Iterable[tuple[str, str]] = (), **kw):
        super().__init__(provider_id, cache, **kw)
        self.fail_on = set(fail_on)

    def _translate(self, job):
        s, g = job.source_lang.code, job.target_lang.code
        if (s, g) in self.fail_on:
            raise BackendUnavailable(f"mock translator refuses {s}->{g}")
        inverse = translation_tag(g, s)
        if job.text.startswith(inverse):
            return job.text[len(inverse):]
        return translation_tag(s, g) + job.text


TRANSLATE_SYSTEM = (
    "You are a professional translator. Translate the user's text from {source} to {target}. "
    "Return only the translation."
)


class ChatTranslator(Translator):
    """Machine translation through a chat model."""

    def __init__(self, chat: ChatBackend, model_id: str, provider_id: Optional[str] = None, cache=None, **kw):
        super().__init__(provider_id or f"mt-{chat.provider_id}", cache, **kw)
        self.chat = chat
        self.model_id = model_id

    def _translate(self, job):
        req = ChatRequest(
            self.model_id,
            TRANSLATE_SYSTEM.format(source=job.source_lang.code, target=job.target_lang.code),
            job.text,
        )
        return self.chat.complete(req)


# ---------------------------------------------------------------- embeddings


class Embedder(Backend):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise InvalidInput("embed() needs at least one text")
        out = []
        for t in texts:
            vals = self._cached("embed", {"text": t}, lambda t=t: [float(x) for x in self._embed_one(t)])
            if len(vals) != self.dimension:
                raise ProtocolError(f"{self.provider_id}: expected dimension {self.dimension}, got {len(vals)}")
            out.append(EmbeddingVector(self.provider_id, self.dimension, tuple(vals)))
        return out

    def embed_array(self, texts: Sequence[str]) -> np.ndarray:
        return np.array([v.values for v in self.embed(texts)], dtype=float)

    def _embed_one(self, text: str) -> Sequence[float]:
        raise NotImplementedError


class HashedEmbedder(Embedder):
    """Signed feature hashing of word unigrams and bigrams, L2-normalised."""

    def __init__(self, provider_id: str = "hashed", dimension: int = 64, cache=None, salt: str = "", **kw):
        super().__init__(provider_id, cache, **kw)
        if dimension < 1:
            raise InvalidInput("dimension must be >= 1")
        self.dimension = dimension
        self.salt = salt or provider_id

    def _embed_one(self, text):
        vec = np.zeros(self.dimension)
        words = [w.lower() for w in _WORD_RE.findall(text)]
        feats = words + [a + " " + b for a, b in zip(words, words[1:])]
        for f in feats:
            h = _stable_int(self.salt, f)
            vec[h % self.dimension] += 1.0 if (h >> 32) & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec.tolist()


class OpenAIEmbedder(Embedder):
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, provider_id: str, base_url: str, model_name: str, dimension: int,
                 key_env: Optional[str] = None, cache=None, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None, attempts: int = 3,
                 base_delay: float = 1.0, sleep: Callable[[float], None] = time.sleep, **kw):
        super().__init__(provider_id, cache, **kw)
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.dimension = dimension
        self.key_env = key_env or provider_env_var(provider_id)
        self.attempts = attempts
        self.base_delay = base_delay
        self.sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _embed_one(self, text):
        key = _credential(self.key_env)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        body = {"model": self.model_name, "input": [text]}
        resp = with_retries(
            lambda: self._client.post(f"{self.base_url}/embeddings", json=body, headers=headers),
            self.attempts, self.base_delay, self.sleep,
        )
        try:
            return [float(x) for x in resp.json()["data"][0]["embedding"]]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed embedding response: {exc}") from exc


# module-level conveniences mirroring the operation names

def complete(backend: ChatBackend, req: ChatRequest) -> str:
    return backend.complete(req)


def translate(backend: Translator, job: TranslationJob) -> str:
    return backend.translate(job)


def embed(backend: Embedder, texts: Sequence[str]) -> list[EmbeddingVector]:
    return backend.embed(texts)
