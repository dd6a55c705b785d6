"""Transcript recording and playback backends.

A transcript is a JSON-lines file of ``{"digest": ..., "response": ...}``
entries keyed by the canonical request digest. Playback serves requests
only from the transcript and fails loudly on a miss; there is no network
fallback, which makes pipeline runs byte-reproducible.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from .core import ChatRequest, ChatResponse, GatewayError


class PlaybackMissError(GatewayError):
    """Requested digest is not present in the transcript."""


class PlaybackBackend:
    """Serves chat and embedding responses from a recorded transcript."""

    def __init__(self, transcript: str | Path):
        self.path = Path(transcript)
        self._entries: dict[str, dict] = {}
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._entries[rec["digest"]] = rec["response"]

    def _lookup(self, digest: str) -> dict:
        try:
            return self._entries[digest]
        except KeyError:
            raise PlaybackMissError(
                f"digest {digest} not found in transcript {self.path}"
            ) from None

    def chat(self, request: ChatRequest, digest: str) -> ChatResponse:
        return ChatResponse.from_payload(self._lookup(digest))

    def embed(self, texts: list[str], model_id: str, digests: list[str]) -> list[list[float]]:
        return [list(self._lookup(d)["embedding"]) for d in digests]


class RecordingBackend:
    """Wraps a backend and appends every response to a transcript file."""

    def __init__(self, inner, transcript: str | Path):
        self.inner = inner
        self.path = Path(transcript)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seen: set[str] = set()
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._seen.add(json.loads(line)["digest"])

    def _record(self, digest: str, response: dict) -> None:
        with self._lock:
            if digest in self._seen:
                return
            self._seen.add(digest)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"digest": digest, "response": response}) + "\n")

    def chat(self, request: ChatRequest, digest: str) -> ChatResponse:
        response = self.inner.chat(request, digest)
        self._record(digest, response.to_payload())
        return response

    def embed(self, texts: list[str], model_id: str, digests: list[str]) -> list[list[float]]:
        vectors = self.inner.embed(texts, model_id, digests)
        for digest, vec in zip(digests, vectors):
            self._record(digest, {"embedding": list(vec)})
        return vectors


def playback_backend(transcript: str | Path) -> PlaybackBackend:
    """Open a transcript for playback-only serving."""
    return PlaybackBackend(transcript)
