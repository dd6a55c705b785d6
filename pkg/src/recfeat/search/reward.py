"""Reward-model validation of generated features.

The reward for a feature set is the number of features the reward model
marks as distinguishing the user's liked items from the disliked ones;
that count is what every search strategy maximizes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from ..dataset import ItemCatalog, PreferenceProfile
from ..gateway.core import user_request
from ..prompts import render_reward_prompt
from .features import Feature

# Seed shift for parse-failure retries: a changed seed changes the request
# digest, so the retry is not served the cached failure.
_RETRY_SEED_SHIFT = 1_000_003


@dataclass
class RewardScore:
    valid_count: int
    per_feature: list[bool]


def _parse_verdicts(raw: str, expected: int) -> list[bool] | None:
    """Extract a boolean array; None when no array can be recognized."""
    start, end = raw.find("["), raw.rfind("]")
    if start == -1 or end <= start:
        return None
    try:
        values = json.loads(raw[start : end + 1])
    except json.JSONDecodeError:
        # Tolerate bare true/false words inside brackets with odd casing.
        tokens = re.findall(r"(true|false)", raw[start : end + 1], re.IGNORECASE)
        if not tokens:
            return None
        values = [t.lower() == "true" for t in tokens]
    if not isinstance(values, list):
        return None
    verdicts: list[bool] = []
    for v in values:
        if isinstance(v, bool):
            verdicts.append(v)
        elif isinstance(v, (int, float)) and v in (0, 1):
            verdicts.append(bool(v))
        elif isinstance(v, str) and v.strip().lower() in ("true", "false"):
            verdicts.append(v.strip().lower() == "true")
        else:
            return None
    if len(verdicts) < expected:
        return None
    return verdicts[:expected]


def score_features(session, features: list[Feature], profile: PreferenceProfile,
                   catalog: ItemCatalog, seed: int | None = None) -> RewardScore:
    """One reward-model call scoring every feature in the set.

    An unparseable verdict array is retried once with a shifted seed;
    after that every feature defaults to invalid.
    """
    if not features:
        return RewardScore(valid_count=0, per_feature=[])
    prompt = render_reward_prompt(
        profile, catalog, [(f.name, f.definition) for f in features]
    )
    request = user_request(
        session.reward_model_id,
        prompt,
        temperature=session.reward_temperature,
        max_tokens=session.reward_max_tokens,
        seed=seed,
    )
    response = session.reward.complete(request)
    verdicts = _parse_verdicts(response.text, len(features))
    if verdicts is None:
        session.stats["reward_parse_retries"] += 1
        retry = user_request(
            session.reward_model_id,
            prompt,
            temperature=session.reward_temperature,
            max_tokens=session.reward_max_tokens,
            seed=(seed or 0) + _RETRY_SEED_SHIFT,
        )
        verdicts = _parse_verdicts(session.reward.complete(retry).text, len(features))
    if verdicts is None:
        verdicts = [False] * len(features)
    return RewardScore(valid_count=sum(verdicts), per_feature=verdicts)
