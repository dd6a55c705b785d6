"""Uniform access to chat-completion and embedding backends.

The Gateway canonicalizes every request into a content digest, consults
an on-disk response cache, bounds in-flight backend calls, and retries
transient failures. Backends are pluggable: an OpenAI-compatible HTTP
client, deterministic offline mocks, and transcript record/playback.
"""

from .core import (
    AuthenticationError,
    BackendReplyError,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    Gateway,
    GatewayError,
    ResponseCache,
    RetriesExhaustedError,
    RetryPolicy,
    TransientBackendError,
    Usage,
    chat_digest,
    embed_digest,
)
from .backends import OpenAICompatBackend, ScriptedChatBackend, ScriptedEmbedBackend
from .mock import DeterministicMockBackend
from .playback import PlaybackBackend, PlaybackMissError, RecordingBackend, playback_backend

__all__ = [
    "AuthenticationError",
    "BackendReplyError",
    "ChatRequest",
    "ChatResponse",
    "DeterministicMockBackend",
    "EmbeddingVector",
    "Gateway",
    "GatewayError",
    "OpenAICompatBackend",
    "PlaybackBackend",
    "PlaybackMissError",
    "RecordingBackend",
    "ResponseCache",
    "RetriesExhaustedError",
    "RetryPolicy",
    "ScriptedChatBackend",
    "ScriptedEmbedBackend",
    "TransientBackendError",
    "Usage",
    "chat_digest",
    "embed_digest",
    "playback_backend",
]
