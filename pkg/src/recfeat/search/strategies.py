"""The four feature-search strategies.

CoT and Best-of-N operate on complete generations; Beam and MCTS extend
partial feature lists one feature at a time, scoring prefixes with the
reward model. A search "step" adds one feature; a state is terminal when
it reaches ``max_features`` or the policy answers with the END marker.

All stochastic choices flow through seeds derived from
``StrategyConfig.rng_seed``, so a fixed seed plus a playback backend
reproduces a search exactly.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace

from ..dataset import ItemCatalog, PreferenceProfile
from ..gateway.core import Gateway, user_request
from ..prompts import render_continuation_prompt, render_policy_prompt
from ..rng import derive_seed
from .features import Feature, FeatureParseError, FeatureSet, parse_features, with_provenance
from .reward import _RETRY_SEED_SHIFT, RewardScore, score_features

logger = logging.getLogger(__name__)

STRATEGIES = ("cot", "best_of_n", "beam", "mcts")

_END_RE = re.compile(r"^end[.!]?$", re.IGNORECASE)


@dataclass
class SearchSession:
    """Gateways and model settings shared by one search run."""

    policy: Gateway
    reward: Gateway
    policy_model_id: str
    reward_model_id: str
    policy_temperature: float = 1.0
    reward_temperature: float = 0.0
    policy_max_tokens: int = 1024
    reward_max_tokens: int = 512
    stats: Counter = field(default_factory=Counter)


@dataclass
class StrategyConfig:
    n: int = 8
    m: int = 2
    mcts_iterations: int = 32
    uct_c: float = 1.414
    max_features: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if self.n % self.m != 0:
            raise ValueError(f"n must be divisible by m, got n={self.n}, m={self.m}")
        if self.mcts_iterations < 1:
            raise ValueError("mcts_iterations must be >= 1")
        if self.uct_c <= 0:
            raise ValueError("uct_c must be positive")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@dataclass
class SearchNode:
    """MCTS tree node over partial feature sequences."""

    partial: list[Feature] = field(default_factory=list)
    visits: int = 0
    total_reward: float = 0.0
    children: list["SearchNode"] = field(default_factory=list)
    terminal: bool = False


def uct_score(node: SearchNode, parent_visits: int, c: float) -> float:
    """Mean reward plus exploration bonus; +inf for unvisited nodes."""
    if parent_visits < 1:
        raise ValueError("parent_visits must be positive")
    if node.visits == 0:
        return math.inf
    return node.total_reward / node.visits + c * math.sqrt(
        math.log(parent_visits) / node.visits
    )


def _policy_complete(session: SearchSession, prompt: str, seed: int | None):
    request = user_request(
        session.policy_model_id,
        prompt,
        temperature=session.policy_temperature,
        max_tokens=session.policy_max_tokens,
        seed=seed,
    )
    return session.policy.complete(request)


def _scored_validity(
    session: SearchSession, features: list[Feature], profile, catalog
) -> tuple[list[Feature], RewardScore]:
    """Score features and return valid-flagged copies plus the score."""
    score = score_features(session, features, profile, catalog)
    flagged = [replace(f, valid=v) for f, v in zip(features, score.per_feature)]
    return flagged, score


def generate_cot(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    seed: int | None = None,
    strategy: str = "cot",
) -> FeatureSet:
    """One full policy generation; retries parsing once with a new seed."""
    prompt = render_policy_prompt(profile, catalog)
    response = _policy_complete(session, prompt, seed)
    try:
        parsed = parse_features(response.text, user_id=profile.user_id)
    except FeatureParseError:
        session.stats["policy_parse_retries"] += 1
        response = _policy_complete(session, prompt, (seed or 0) + _RETRY_SEED_SHIFT)
        try:
            parsed = parse_features(response.text, user_id=profile.user_id)
        except FeatureParseError:
            session.stats["policy_parse_failures"] += 1
            return FeatureSet(
                user_id=profile.user_id, features=[], raw_text=response.text, failed=True
            )
    parsed.features = with_provenance(parsed.features, session.policy_model_id, strategy, 0)
    return parsed


def _finalize(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    features: list[Feature],
    raw_text: str,
    strategy: str,
    steps,
) -> FeatureSet:
    """Score a final feature sequence, keep only valid features."""
    if not features:
        return FeatureSet(user_id=profile.user_id, features=[], raw_text=raw_text, failed=True)
    flagged, _ = _scored_validity(session, features, profile, catalog)
    if isinstance(steps, int):
        steps = [steps] * len(flagged)
    kept, kept_steps = [], []
    for f, step in zip(flagged, steps):
        if f.valid:
            kept.append(f)
            kept_steps.append(step)
    kept = with_provenance(kept, session.policy_model_id, strategy, kept_steps)
    kept = [replace(f, valid=True) for f in kept]
    return FeatureSet(user_id=profile.user_id, features=kept, raw_text=raw_text)


def best_of_n(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    config: StrategyConfig,
) -> FeatureSet:
    """N complete generations; keep the one with the most valid features.

    Invalid features are dropped from each sample before comparison, and
    ties go to the lowest sample index.
    """
    best: FeatureSet | None = None
    best_count = -1
    for i in range(config.n):
        seed = derive_seed(config.rng_seed, "bon", profile.user_id, i)
        sample = generate_cot(session, profile, catalog, seed=seed, strategy="best_of_n")
        if sample.failed:
            continue
        flagged, score = _scored_validity(session, sample.features, profile, catalog)
        if score.valid_count > best_count:
            kept = with_provenance(
                [f for f in flagged if f.valid], session.policy_model_id, "best_of_n", i
            )
            kept = [replace(f, valid=True) for f in kept]
            best = FeatureSet(user_id=profile.user_id, features=kept, raw_text=sample.raw_text)
            best_count = score.valid_count
    if best is None:
        session.stats["best_of_n_all_failed"] += 1
        return FeatureSet(user_id=profile.user_id, features=[], raw_text="", failed=True)
    return best


@dataclass
class _Beam:
    features: list[Feature]
    raw_lines: list[str]
    terminal: bool = False


def _propose_next(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    existing: list[Feature],
    seed: int,
) -> tuple[Feature | None, str]:
    """One continuation call: the next feature, or None at END.

    Unparseable replies and duplicate names are treated as END so the
    search cannot loop without making progress.
    """
    prompt = render_continuation_prompt(
        profile, catalog, [(f.name, f.definition) for f in existing]
    )
    response = _policy_complete(session, prompt, seed)
    text = response.text.strip()
    first_line = text.splitlines()[0].strip() if text else ""
    if _END_RE.match(first_line):
        return None, response.text
    try:
        parsed = parse_features(text)
    except FeatureParseError:
        session.stats["continuation_parse_failures"] += 1
        return None, response.text
    feature = parsed.features[0]
    if feature.name.lower() in {f.name.lower() for f in existing}:
        session.stats["continuation_duplicates"] += 1
        return None, response.text
    return feature, response.text


def beam_search(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    config: StrategyConfig,
    trace: list | None = None,
) -> FeatureSet:
    """Stepwise beam search over partial feature lists.

    Each round scores the N current beams, keeps the best N/M (ties to
    the lowest beam index), and expands every survivor with M sampled
    one-feature continuations, restoring N beams. Terminal survivors are
    carried forward as M copies so the pool size stays exact. Stops when
    every surviving beam is terminal; the best final beam is returned
    with its invalid features removed.
    """
    keep = config.n // config.m

    def extend(beam: _Beam, round_index: int, slot: int) -> _Beam:
        if beam.terminal or len(beam.features) >= config.max_features:
            return _Beam(beam.features, beam.raw_lines, terminal=True)
        seed = derive_seed(config.rng_seed, "beam", profile.user_id, round_index, slot)
        feature, raw = _propose_next(session, profile, catalog, beam.features, seed)
        if feature is None:
            return _Beam(beam.features, beam.raw_lines + [raw], terminal=True)
        feature = replace(
            feature,
            provenance=replace(feature.provenance, step_index=round_index),
        )
        grown = _Beam(beam.features + [feature], beam.raw_lines + [raw])
        grown.terminal = len(grown.features) >= config.max_features
        return grown

    beams = [extend(_Beam([], []), 0, i) for i in range(config.n)]
    round_index = 0
    while True:
        scores = [
            score_features(session, beam.features, profile, catalog).valid_count
            for beam in beams
        ]
        ranked = sorted(range(len(beams)), key=lambda i: (-scores[i], i))
        survivors = [beams[i] for i in ranked[:keep]]
        if trace is not None:
            trace.append(
                {
                    "round": round_index,
                    "post_expansion": len(beams),
                    "post_prune": len(survivors),
                }
            )
        if all(beam.terminal for beam in survivors):
            beams = survivors
            break
        round_index += 1
        beams = [
            extend(beam, round_index, s * config.m + j)
            for s, beam in enumerate(survivors)
            for j in range(config.m)
        ]

    final_scores = [
        score_features(session, beam.features, profile, catalog).valid_count
        for beam in beams
    ]
    best = beams[max(range(len(beams)), key=lambda i: (final_scores[i], -i))]
    return _finalize(
        session,
        profile,
        catalog,
        best.features,
        "\n".join(best.raw_lines),
        "beam",
        [f.provenance.step_index for f in best.features],
    )


def mcts(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    config: StrategyConfig,
    iteration_hook=None,
) -> FeatureSet:
    """Monte Carlo tree search over partial feature lists.

    Each iteration selects by UCT down to a node with an untried
    expansion slot (width ``config.m``), expands it one feature, rolls
    out to a terminal state, scores the rollout with the reward model,
    and backpropagates the reward along the selected path. The answer
    follows highest-visit children from the root. Policy failures during
    a rollout give that rollout reward 0.
    """
    root = SearchNode()

    def rollout_reward(features: list[Feature], iteration: int) -> float:
        depth = 0
        current = list(features)
        while len(current) < config.max_features:
            seed = derive_seed(
                config.rng_seed, "mcts", profile.user_id, "rollout", iteration, depth
            )
            feature, _ = _propose_next(session, profile, catalog, current, seed)
            if feature is None:
                break
            current.append(feature)
            depth += 1
        return float(score_features(session, current, profile, catalog).valid_count)

    for iteration in range(config.mcts_iterations):
        node = root
        path = [root]
        while not node.terminal and node.children and len(node.children) >= config.m:
            node = max(node.children, key=lambda ch: uct_score(ch, node.visits, config.uct_c))
            path.append(node)

        if not node.terminal and len(node.partial) < config.max_features:
            seed = derive_seed(
                config.rng_seed, "mcts", profile.user_id, "expand", iteration
            )
            feature, _ = _propose_next(session, profile, catalog, node.partial, seed)
            if feature is None:
                child = SearchNode(partial=list(node.partial), terminal=True)
            else:
                stamped = replace(
                    feature,
                    provenance=replace(feature.provenance, step_index=len(node.partial)),
                )
                child = SearchNode(partial=node.partial + [stamped])
                child.terminal = len(child.partial) >= config.max_features
            node.children.append(child)
            path.append(child)
            node = child
        else:
            node.terminal = True

        try:
            if node.terminal:
                reward = float(
                    score_features(session, node.partial, profile, catalog).valid_count
                )
            else:
                reward = rollout_reward(node.partial, iteration)
        except Exception:
            logger.exception("rollout failed; reward 0")
            session.stats["mcts_rollout_failures"] += 1
            reward = 0.0

        for visited in path:
            visited.visits += 1
            visited.total_reward += reward
        if iteration_hook is not None:
            iteration_hook(root, path, reward)

    node = root
    while node.children:
        node = max(node.children, key=lambda ch: ch.visits)
    return _finalize(
        session,
        profile,
        catalog,
        node.partial,
        "\n".join(f.text() for f in node.partial),
        "mcts",
        [f.provenance.step_index for f in node.partial],
    )


def run_strategy(
    session: SearchSession,
    profile: PreferenceProfile,
    catalog: ItemCatalog,
    config: StrategyConfig,
    strategy: str,
) -> FeatureSet:
    """Dispatch one user's search to the named strategy.

    CoT output passes through the same validity scoring and filtering as
    the search strategies so that every emitted feature has valid=True.
    """
    if strategy == "cot":
        seed = derive_seed(config.rng_seed, "cot", profile.user_id)
        sample = generate_cot(session, profile, catalog, seed=seed)
        if sample.failed:
            return sample
        return _finalize(
            session, profile, catalog, sample.features, sample.raw_text, "cot", 0
        )
    if strategy == "best_of_n":
        return best_of_n(session, profile, catalog, config)
    if strategy == "beam":
        return beam_search(session, profile, catalog, config)
    if strategy == "mcts":
        return mcts(session, profile, catalog, config)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
