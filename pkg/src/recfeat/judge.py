"""Pairwise specificity judging with position-swap consistency.

Each pair is judged twice with the presentation order swapped; a side
wins only when both rounds select its content, otherwise the pair is a
tie. Unclear or refused replies also count as ties.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .gateway.core import Gateway, GatewayError, user_request
from .prompts import render_judge_prompt
from .rng import SplitMix64, derive_seed
from .search.features import Feature, FeatureSet

logger = logging.getLogger(__name__)

A_WINS = "a_wins"
B_WINS = "b_wins"
TIE = "tie"


@dataclass
class JudgePair:
    side_a: Feature
    side_b: Feature
    context: str


@dataclass
class Verdict:
    outcome: str
    round_1: str
    round_2: str


@dataclass
class JudgeReport:
    judge_model_id: str
    wins_a: int = 0
    ties: int = 0
    wins_b: int = 0
    skipped: int = 0

    @property
    def total(self) -> int:
        return self.wins_a + self.ties + self.wins_b


def _parse_choice(raw: str) -> str:
    """Map a judge reply to first/second/unclear."""
    lowered = raw.strip().lower()
    has_first = "first" in lowered
    has_second = "second" in lowered
    if has_first and not has_second:
        return "first"
    if has_second and not has_first:
        return "second"
    return "unclear"


def compare_pair(
    pair: JudgePair,
    gateway: Gateway,
    judge_model_id: str,
    temperature: float = 0.0,
    max_tokens: int = 16,
) -> Verdict:
    """Two judge calls with swapped positions, reconciled into a verdict."""

    def ask(first_text: str, second_text: str) -> str:
        prompt = render_judge_prompt(first_text, second_text)
        response = gateway.complete(
            user_request(judge_model_id, prompt, temperature=temperature, max_tokens=max_tokens)
        )
        return _parse_choice(response.text)

    round_1 = ask(pair.side_a.text(), pair.side_b.text())  # A first
    round_2 = ask(pair.side_b.text(), pair.side_a.text())  # B first
    a_selected_both = round_1 == "first" and round_2 == "second"
    b_selected_both = round_1 == "second" and round_2 == "first"
    if a_selected_both:
        outcome = A_WINS
    elif b_selected_both:
        outcome = B_WINS
    else:
        outcome = TIE
    return Verdict(outcome=outcome, round_1=round_1, round_2=round_2)


def build_pairs(
    sets_a: dict[str, FeatureSet],
    sets_b: dict[str, FeatureSet],
    pairing_seed: int,
    sample_size: int | None = None,
) -> list[JudgePair]:
    """Seed-determined pairing over users both models cover.

    For each sampled user, the first valid feature of each side is
    paired (per-feature rewards are booleans, so all valid features tie
    at reward 1 and the first is the deterministic pick).
    """
    common = sorted(set(sets_a) & set(sets_b))
    if not common:
        raise ValueError("no users in common between the two feature sets")
    rng = SplitMix64(derive_seed(pairing_seed, "judge_pairing"))
    rng.shuffle(common)
    if sample_size is not None:
        common = common[:sample_size]
    pairs = []
    for user_id in common:
        valid_a = sets_a[user_id].valid_features()
        valid_b = sets_b[user_id].valid_features()
        if not valid_a or not valid_b:
            continue
        pairs.append(JudgePair(side_a=valid_a[0], side_b=valid_b[0], context=user_id))
    return pairs


def run_judging(
    sets_a: dict[str, FeatureSet],
    sets_b: dict[str, FeatureSet],
    judges: list[str],
    gateway: Gateway,
    pairing_seed: int = 0,
    sample_size: int | None = None,
    audit: list | None = None,
) -> list[JudgeReport]:
    """Judge every pair under every judge model; one report per judge.

    Gateway failures skip the pair (counted on the report). When
    ``audit`` is given, one record per judged pair is appended to it.
    """
    pairs = build_pairs(sets_a, sets_b, pairing_seed, sample_size)
    reports = []
    for judge_model_id in judges:
        report = JudgeReport(judge_model_id=judge_model_id)
        for pair in pairs:
            try:
                verdict = compare_pair(pair, gateway, judge_model_id)
            except GatewayError as exc:
                logger.warning("skipping pair for user %s: %s", pair.context, exc)
                report.skipped += 1
                continue
            if verdict.outcome == A_WINS:
                report.wins_a += 1
            elif verdict.outcome == B_WINS:
                report.wins_b += 1
            else:
                report.ties += 1
            if audit is not None:
                audit.append(
                    {
                        "judge": judge_model_id,
                        "user": pair.context,
                        "feature_a": pair.side_a.text(),
                        "feature_b": pair.side_b.text(),
                        "round_1": verdict.round_1,
                        "round_2": verdict.round_2,
                        "outcome": verdict.outcome,
                    }
                )
        reports.append(report)
    return reports
