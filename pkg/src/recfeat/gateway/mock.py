"""Deterministic offline backend for every model role.

Every reply is a pure function of the request digest, so cache, record,
and playback all see one stable stream. The backend recognizes the
prompts produced by ``recfeat.prompts`` via marker phrases and answers
in the format each prompt asks for; it is intentionally coupled to
those templates.

The embedding rule, for tests that recompute it: seed SplitMix64 with
the first 8 bytes (little-endian) of SHA-256(text), draw ``dim`` values
u in [0, 1) as next_u64() / 2^64, map to 2u - 1, then L2-normalize.
"""

from __future__ import annotations

import hashlib
import json
import math
import re

from ..rng import SplitMix64
from .core import ChatRequest, ChatResponse, Usage

# Vocabulary of plausible product-preference features the mock draws from.
FEATURE_VOCAB: list[tuple[str, str]] = [
    ("Material Quality", "The sturdiness and finish of the materials used in the product."),
    ("Color Scheme", "The palette and vibrancy of the product's visible surfaces."),
    ("Brand Loyalty", "Whether the product comes from a brand the user repeatedly buys."),
    ("Price Sensitivity", "How strongly the price point drives the user's decision."),
    ("Durability", "Resistance to wear, drops, and repeated heavy use."),
    ("Age Suitability", "Fit between the product's target age range and the user's needs."),
    ("Size and Scale", "Physical dimensions relative to storage and play space."),
    ("Battery Dependence", "Whether operation requires batteries or charging."),
    ("Educational Value", "How much the product teaches skills or concepts."),
    ("Collectibility", "Appeal as part of a set or limited series."),
    ("Sound Output", "Volume and quality of sounds the product produces."),
    ("Portability", "Ease of carrying the product outside the home."),
    ("Safety Standards", "Absence of small parts, sharp edges, or toxic materials."),
    ("Assembly Complexity", "Effort needed to put the product together before use."),
    ("Theme Alignment", "Match with franchises or themes the user favors."),
    ("Interactivity", "Degree of active engagement the product invites."),
    ("Packaging Quality", "Sturdiness and presentation of the retail packaging."),
    ("Replay Value", "How often the product stays interesting after first use."),
    ("Character Tie-in", "Presence of characters from media the user follows."),
    ("Seasonal Appeal", "Fit with holidays or seasons the user shops around."),
    ("Surface Texture", "Tactile feel of the product's exterior."),
    ("Weight Balance", "Heft and distribution of weight during handling."),
    ("Maintenance Needs", "Cleaning or upkeep the product requires."),
    ("Gifting Suitability", "How well the product works as a present."),
]

_CONTINUE_MARKER = "Propose exactly one additional feature"
_POLICY_MARKER = "You are a user behavior analyst"
_REWARD_MARKER = "You are evaluating candidate features"
_RANK_MARKER = "Respond with the candidate numbers in ranked order"
_NIP_MARKER = "Respond with exactly one candidate number"
_JUDGE_MARKER = "Which description is more specific and detailed?"


def _digest_rng(digest: str) -> SplitMix64:
    return SplitMix64(int(digest[:16], 16))


def hash_unit_vector(text: str, dim: int) -> list[float]:
    """The documented hash-to-unit-vector embedding rule."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    rng = SplitMix64(seed)
    values = [2.0 * (rng.next_u64() / 2.0**64) - 1.0 for _ in range(dim)]
    norm = math.sqrt(sum(v * v for v in values))
    if norm < 1e-12:
        values[0] = 1.0
        norm = 1.0
    return [v / norm for v in values]


class DeterministicMockBackend:
    """Offline chat + embedding backend with digest-derived replies."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def chat(self, request: ChatRequest, digest: str) -> ChatResponse:
        prompt = "\n".join(content for _, content in request.messages)
        rng = _digest_rng(digest)
        if _CONTINUE_MARKER in prompt:
            text = self._continuation(prompt, rng)
        elif _POLICY_MARKER in prompt:
            text = self._generation(rng)
        elif _REWARD_MARKER in prompt:
            text = self._reward(prompt, rng)
        elif _RANK_MARKER in prompt:
            text = self._ranking(prompt, rng)
        elif _NIP_MARKER in prompt:
            text = self._next_item(prompt, rng)
        elif _JUDGE_MARKER in prompt:
            text = self._judge(prompt)
        else:
            text = "OK"
        return ChatResponse(text=text, usage=Usage(completion_tokens=len(text.split())))

    def embed(self, texts: list[str], model_id: str, digests: list[str]) -> list[list[float]]:
        return [hash_unit_vector(text, self.dim) for text in texts]

    def _generation(self, rng: SplitMix64) -> str:
        count = 3 + rng.next_below(4)
        picks = rng.sample(FEATURE_VOCAB, count)
        if rng.next_below(2) == 0:
            return json.dumps({name: definition for name, definition in picks}, indent=2)
        lines = [f"{i}. {name}: {definition}" for i, (name, definition) in enumerate(picks, 1)]
        return "Based on the rating differences, the key features are:\n" + "\n".join(lines)

    def _continuation(self, prompt: str, rng: SplitMix64) -> str:
        used = {
            m.group(1).strip().lower()
            for m in re.finditer(r"^- ([^:]+):", prompt, re.MULTILINE)
        }
        unused = [(n, d) for n, d in FEATURE_VOCAB if n.lower() not in used]
        if not unused or rng.next_below(6) == 0:
            return "END"
        name, definition = unused[rng.next_below(len(unused))]
        return f"{name}: {definition}"

    def _reward(self, prompt: str, rng: SplitMix64) -> str:
        tail = prompt.split("Candidate features:", 1)[-1]
        count = len(re.findall(r"^\d+\. ", tail, re.MULTILINE))
        verdicts = [rng.next_below(4) != 0 for _ in range(max(count, 1))]
        return json.dumps(verdicts)

    def _candidate_count(self, prompt: str) -> int:
        match = re.search(r"Here are (\d+) candidate products:", prompt)
        return int(match.group(1)) if match else 20

    def _ranking(self, prompt: str, rng: SplitMix64) -> str:
        order = list(range(1, self._candidate_count(prompt) + 1))
        rng.shuffle(order)
        return "Ranking: " + ", ".join(str(i) for i in order)

    def _next_item(self, prompt: str, rng: SplitMix64) -> str:
        return f"Answer: {1 + rng.next_below(self._candidate_count(prompt))}"

    def _judge(self, prompt: str) -> str:
        first = prompt.split("Feature description 1:", 1)[-1].split("Feature description 2:", 1)[0]
        second = prompt.split("Feature description 2:", 1)[-1].split(_JUDGE_MARKER, 1)[0]
        h1 = hashlib.sha256(first.strip().encode("utf-8")).hexdigest()
        h2 = hashlib.sha256(second.strip().encode("utf-8")).hexdigest()
        return "First" if h1 > h2 else "Second"
