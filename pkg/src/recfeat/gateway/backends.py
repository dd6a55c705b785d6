"""Remote and scripted backends behind the Gateway."""

from __future__ import annotations

import logging
import os
from typing import Callable

import httpx

from .core import (
    AuthenticationError,
    BackendReplyError,
    ChatRequest,
    ChatResponse,
    TransientBackendError,
    Usage,
)

logger = logging.getLogger(__name__)

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class OpenAICompatBackend:
    """Chat-completions and embeddings over an OpenAI-compatible JSON API.

    ``api_key_env`` names the environment variable holding the key; when
    unset or empty no Authorization header is sent (local proxies).
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if not key:
                raise AuthenticationError(
                    f"environment variable {api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers=headers,
            timeout=timeout_s,
            transport=transport,
        )

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"network error: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthenticationError(f"backend returned HTTP {response.status_code}")
        if response.status_code in _RETRYABLE_STATUS:
            raise TransientBackendError(f"backend returned HTTP {response.status_code}")
        if response.status_code != 200:
            raise BackendReplyError(
                f"backend returned HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise BackendReplyError(f"backend reply is not JSON: {exc}") from exc

    def chat(self, request: ChatRequest, digest: str) -> ChatResponse:
        payload = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendReplyError(f"malformed backend reply: {exc}") from exc
        usage = data.get("usage", {})
        return ChatResponse(
            text=text,
            finish_reason=finish if finish in ("stop", "length") else "error",
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )

    def embed(self, texts: list[str], model_id: str, digests: list[str]) -> list[list[float]]:
        data = self._post("/embeddings", {"model": model_id, "input": texts})
        try:
            rows = sorted(data["data"], key=lambda d: d["index"])
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendReplyError(f"malformed embeddings reply: {exc}") from exc


class ScriptedChatBackend:
    """Test backend: a responder callable maps each request to its text."""

    def __init__(self, responder: Callable[[ChatRequest], str]):
        self._responder = responder
        self.calls = 0

    @classmethod
    def from_rules(cls, rules: list[tuple[str, str]], default: str = "") -> "ScriptedChatBackend":
        """Substring-matching rules: first (needle, reply) whose needle occurs wins."""

        def responder(request: ChatRequest) -> str:
            prompt = "\n".join(content for _, content in request.messages)
            for needle, reply in rules:
                if needle in prompt:
                    return reply
            return default

        return cls(responder)

    def chat(self, request: ChatRequest, digest: str) -> ChatResponse:
        self.calls += 1
        text = self._responder(request)
        return ChatResponse(text=text, usage=Usage(completion_tokens=len(text.split())))


class ScriptedEmbedBackend:
    """Test backend: a callable maps each text to its vector."""

    def __init__(self, embedder: Callable[[str], list[float]]):
        self._embedder = embedder
        self.calls = 0

    def embed(self, texts: list[str], model_id: str, digests: list[str]) -> list[list[float]]:
        self.calls += 1
        return [self._embedder(t) for t in texts]
