"""Portable deterministic random number generation.

Candidate sampling, user sampling for judging, and per-sample generation
seeds all flow through the generator defined here, so that a (seed, data)
pair reproduces identical splits and searches on any platform or in any
reimplementation.

The generator is SplitMix64:

    state' = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state'
    z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output = z XOR (z >> 31)

Bounded draws use plain modulo: ``next_below(n) = next_u64() mod n``. The
modulo bias is negligible for the n used here (n < 2^32) and keeps the
mapping trivially portable.

Derived seeds (``derive_seed``) hash the root seed plus string/int parts
with SHA-256 and take the first 8 little-endian bytes, so concurrent
workers never share generator state.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64 stream seeded with a 64-bit integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) via modulo reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: list, k: int) -> list:
        """k items without replacement: partial Fisher-Yates over a copy.

        Draw i picks index i + next_below(len - i) and swaps it into
        position i; the first k slots are returned.
        """
        if k > len(items):
            raise ValueError(f"cannot sample {k} from {len(items)} items")
        pool = list(items)
        for i in range(k):
            j = i + self.next_below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(root: int, *parts: str | int) -> int:
    """Stable 64-bit child seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update((root & _MASK64).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, int):
            h.update(b"i")
            h.update((part & _MASK64).to_bytes(8, "little"))
        else:
            h.update(b"s")
            h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")
