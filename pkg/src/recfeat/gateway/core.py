"""Request types, canonical digests, response cache, and the Gateway."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

ROLES = {"system", "user", "assistant"}


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransientBackendError(GatewayError):
    """Retryable failure: rate limit, 5xx, or network error."""


class RetriesExhaustedError(GatewayError):
    """Transient failures persisted past the retry cap."""


class AuthenticationError(GatewayError):
    """Backend rejected the credentials."""


class BackendReplyError(GatewayError):
    """Backend reply did not have the expected shape."""


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        non_system = [r for r, _ in self.messages if r != "system"]
        if non_system and non_system[0] != "user":
            raise ValueError("first non-system message must be from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


def user_request(
    model_id: str,
    prompt: str,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    seed: int | None = None,
) -> ChatRequest:
    """Single-turn user message request."""
    return ChatRequest(
        model_id=model_id,
        messages=(("user", prompt),),
        temperature=temperature,
        max_tokens=max_tokens,
        seed=seed,
    )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Usage = field(default_factory=Usage)
    cached: bool = False

    def to_payload(self) -> dict:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
        }

    @classmethod
    def from_payload(cls, payload: dict, cached: bool = False) -> "ChatResponse":
        usage = payload.get("usage", {})
        return cls(
            text=payload["text"],
            finish_reason=payload.get("finish_reason", "stop"),
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
            cached=cached,
        )


@dataclass
class EmbeddingVector:
    values: list[float]
    model_id: str


def _canonical(payload: dict) -> bytes:
    # Sorted keys + fixed separators make the digest order- and
    # whitespace-stable for unordered fields; ordered fields stay arrays.
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def chat_digest(request: ChatRequest) -> str:
    """Content digest of a chat request (the cache/transcript key)."""
    payload = {
        "kind": "chat",
        "model_id": request.model_id,
        "messages": [[role, content] for role, content in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "seed": request.seed,
    }
    return hashlib.sha256(_canonical(payload)).hexdigest()


def embed_digest(text: str, model_id: str) -> str:
    """Content digest of a single embedding input."""
    payload = {"kind": "embed", "model_id": model_id, "text": text}
    return hashlib.sha256(_canonical(payload)).hexdigest()


class ResponseCache:
    """Content-addressed on-disk store: one JSON file per digest.

    Files live under a two-level fan-out (``ab/cd/<digest>.json``) and are
    written atomically (temp file + rename), so concurrent workers can
    share one cache directory.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest[2:4] / f"{digest}.json"

    def load(self, digest: str) -> dict | None:
        path = self._path(digest)
        try:
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("discarding corrupt cache entry %s", path)
            return None

    def store(self, digest: str, payload: dict) -> None:
        path = self._path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)
        os.replace(tmp, path)


@dataclass
class RetryPolicy:
    """Exponential backoff: initial 1s, factor 2, jitter +/-20%, 5 attempts."""

    initial: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2
    max_attempts: int = 5
    sleep: object = time.sleep

    def delay(self, attempt: int) -> float:
        base = self.initial * self.factor**attempt
        return base * (1 + self.jitter * (2 * random.random() - 1))


class Gateway:
    """Caching, retrying, concurrency-bounded front door to one backend.

    ``backend`` must expose ``chat(request, digest) -> ChatResponse``
    and/or ``embed(texts, model_id, digests) -> list[list[float]]``. At
    most ``max_parallel`` backend calls are in flight at once.
    """

    def __init__(
        self,
        backend,
        cache_dir: str | Path | None = None,
        max_parallel: int = 4,
        retry: RetryPolicy | None = None,
    ):
        self.backend = backend
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.retry = retry or RetryPolicy()
        self._sem = threading.BoundedSemaphore(max_parallel)
        self.stats: Counter = Counter()
        self._stats_lock = threading.Lock()

    def _count(self, key: str, n: int = 1) -> None:
        with self._stats_lock:
            self.stats[key] += n

    def _call_with_retries(self, fn):
        attempt = 0
        while True:
            try:
                with self._sem:
                    return fn()
            except TransientBackendError as exc:
                attempt += 1
                if attempt >= self.retry.max_attempts:
                    raise RetriesExhaustedError(
                        f"giving up after {attempt} attempts: {exc}"
                    ) from exc
                self._count("retries")
                delay = self.retry.delay(attempt - 1)
                logger.info("transient backend error (%s); retry %d in %.1fs", exc, attempt, delay)
                self.retry.sleep(delay)

    def complete(self, request: ChatRequest) -> ChatResponse:
        """Chat completion, served from cache when possible."""
        digest = chat_digest(request)
        if self.cache is not None:
            payload = self.cache.load(digest)
            if payload is not None:
                self._count("chat_cache_hits")
                return ChatResponse.from_payload(payload, cached=True)
        response = self._call_with_retries(lambda: self.backend.chat(request, digest))
        self._count("chat_calls")
        if self.cache is not None:
            self.cache.store(digest, response.to_payload())
        return response

    def embed(self, texts: list[str], model_id: str) -> list[EmbeddingVector]:
        """Order-preserving embeddings, cached per individual text."""
        if not texts:
            raise ValueError("texts must be non-empty")
        digests = [embed_digest(t, model_id) for t in texts]
        vectors: dict[str, list[float]] = {}
        if self.cache is not None:
            for digest in digests:
                payload = self.cache.load(digest)
                if payload is not None:
                    vectors[digest] = payload["embedding"]
                    self._count("embed_cache_hits")
        # Deduplicate misses by digest so identical texts embed once.
        miss_digests: list[str] = []
        miss_texts: list[str] = []
        for text, digest in zip(texts, digests):
            if digest not in vectors and digest not in miss_digests:
                miss_digests.append(digest)
                miss_texts.append(text)
        if miss_texts:
            values = self._call_with_retries(
                lambda: self.backend.embed(miss_texts, model_id, miss_digests)
            )
            self._count("embed_calls")
            if len(values) != len(miss_texts):
                raise BackendReplyError(
                    f"embedding backend returned {len(values)} vectors for "
                    f"{len(miss_texts)} texts"
                )
            for digest, vec in zip(miss_digests, values):
                vectors[digest] = list(vec)
                if self.cache is not None:
                    self.cache.store(digest, {"embedding": list(vec)})
        return [EmbeddingVector(values=vectors[d], model_id=model_id) for d in digests]
