"""Interaction ingestion, leave-one-out splits, and candidate sampling.

Input is a JSON-lines file with one interaction per line (keys ``user``,
``item``, ``rating``, ``timestamp``) plus a JSON-lines item catalog (keys
``item``, ``title``, ``description``). Each user's chronologically last
interaction becomes the held-out test item; everything earlier is the
training history.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .rng import SplitMix64

logger = logging.getLogger(__name__)

VALID_RATINGS = {1, 2, 3, 4, 5}


@dataclass(frozen=True)
class Interaction:
    """One (user, item, rating, timestamp) event."""

    user_id: str
    item_id: str
    rating: int
    timestamp: int

    def __post_init__(self):
        if self.rating not in VALID_RATINGS:
            raise ValueError(f"rating must be in 1..5, got {self.rating}")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass
class ItemCatalog:
    """item_id -> (title, description) lookup."""

    entries: dict[str, tuple[str, str]] = field(default_factory=dict)

    def title(self, item_id: str) -> str:
        return self.entries[item_id][0]

    def description(self, item_id: str) -> str:
        return self.entries[item_id][1]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def item_ids(self) -> list[str]:
        """All item ids, sorted for deterministic iteration."""
        return sorted(self.entries)


@dataclass
class UserSplit:
    """Chronological train history plus the single held-out test item."""

    user_id: str
    train: list[Interaction]
    test: Interaction


@dataclass
class PreferenceProfile:
    """Train items partitioned into liked/disliked by a rating threshold."""

    user_id: str
    liked: list[tuple[str, int]]
    disliked: list[tuple[str, int]]
    threshold: int


@dataclass
class CandidateSet:
    """C candidate item ids containing the ground truth exactly once."""

    user_id: str
    candidates: list[str]
    ground_truth: str
    seed: int


def load_interactions(path: str | Path) -> tuple[list[Interaction], int]:
    """Parse a JSON-lines interaction file.

    Malformed lines are logged with their line number and skipped.
    Returns (interactions, skipped_count).
    """
    path = Path(path)
    interactions: list[Interaction] = []
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                interactions.append(
                    Interaction(
                        user_id=str(rec["user"]),
                        item_id=str(rec["item"]),
                        rating=int(rec["rating"]),
                        timestamp=int(rec["timestamp"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                logger.warning("skipping malformed record at %s:%d: %s", path, lineno, exc)
                skipped += 1
    return interactions, skipped


def load_catalog(path: str | Path) -> ItemCatalog:
    """Parse a JSON-lines item catalog (keys item, title, description)."""
    catalog = ItemCatalog()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                catalog.entries[str(rec["item"])] = (
                    str(rec["title"]),
                    str(rec.get("description", "")),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                logger.warning("skipping malformed catalog line %d: %s", lineno, exc)
    return catalog


def build_splits(interactions: list[Interaction], min_history: int = 5) -> list[UserSplit]:
    """Leave-one-out split per user.

    Interactions are ordered by (timestamp, item_id); the last one is the
    test item, the rest the train history. Users with fewer than
    ``min_history`` interactions are dropped (logged with a count).
    Splits are returned sorted by user_id.
    """
    if min_history < 2:
        raise ValueError("min_history must be >= 2")
    by_user: dict[str, list[Interaction]] = {}
    for inter in interactions:
        by_user.setdefault(inter.user_id, []).append(inter)

    splits: list[UserSplit] = []
    dropped = 0
    for user_id in sorted(by_user):
        events = sorted(by_user[user_id], key=lambda i: (i.timestamp, i.item_id))
        if len(events) < min_history:
            dropped += 1
            continue
        splits.append(UserSplit(user_id=user_id, train=events[:-1], test=events[-1]))
    if dropped:
        logger.info("dropped %d users below min_history=%d", dropped, min_history)
    return splits


def partition_preferences(split: UserSplit, threshold: int = 4) -> PreferenceProfile:
    """Split train items into liked (rating >= threshold) and disliked."""
    if not 1 <= threshold <= 5:
        raise ValueError("threshold must be in 1..5")
    liked = [(i.item_id, i.rating) for i in split.train if i.rating >= threshold]
    disliked = [(i.item_id, i.rating) for i in split.train if i.rating < threshold]
    return PreferenceProfile(
        user_id=split.user_id, liked=liked, disliked=disliked, threshold=threshold
    )


def sample_candidates(
    split: UserSplit, catalog: ItemCatalog, c: int, seed: int
) -> CandidateSet:
    """Seeded candidate set: c-1 negatives plus the ground truth.

    Negatives are drawn without replacement from the catalog minus the
    user's train items minus the ground truth, using a partial
    Fisher-Yates over the id-sorted pool driven by SplitMix64(seed); the
    ground-truth insertion position is the next draw from the same
    stream. Identical (split, catalog, c, seed) always reproduce the
    identical candidate order.
    """
    truth = split.test.item_id
    history = {i.item_id for i in split.train}
    eligible = [iid for iid in catalog.item_ids() if iid not in history and iid != truth]
    if len(eligible) < c - 1:
        raise ValueError(
            f"catalog has only {len(eligible)} eligible negatives for user "
            f"{split.user_id}, need {c - 1}"
        )
    rng = SplitMix64(seed)
    negatives = rng.sample(eligible, c - 1)
    position = rng.next_below(c)
    candidates = negatives[:position] + [truth] + negatives[position:]
    return CandidateSet(
        user_id=split.user_id, candidates=candidates, ground_truth=truth, seed=seed
    )


def split_to_dict(split: UserSplit) -> dict:
    """JSON-serializable form of a UserSplit."""
    return {
        "user": split.user_id,
        "train": [
            {"item": i.item_id, "rating": i.rating, "timestamp": i.timestamp}
            for i in split.train
        ],
        "test": {
            "item": split.test.item_id,
            "rating": split.test.rating,
            "timestamp": split.test.timestamp,
        },
    }


def split_from_dict(data: dict) -> UserSplit:
    user = data["user"]
    train = [
        Interaction(user, rec["item"], rec["rating"], rec["timestamp"])
        for rec in data["train"]
    ]
    test = data["test"]
    return UserSplit(
        user_id=user,
        train=train,
        test=Interaction(user, test["item"], test["rating"], test["timestamp"]),
    )
