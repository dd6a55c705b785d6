"""Feature generation under CoT, Best-of-N, Beam, and MCTS strategies."""

from .features import Feature, FeatureParseError, FeatureSet, Provenance, parse_features
from .reward import RewardScore, score_features
from .strategies import (
    STRATEGIES,
    SearchNode,
    SearchSession,
    StrategyConfig,
    beam_search,
    best_of_n,
    generate_cot,
    mcts,
    run_strategy,
    uct_score,
)

__all__ = [
    "Feature",
    "FeatureParseError",
    "FeatureSet",
    "Provenance",
    "RewardScore",
    "STRATEGIES",
    "SearchNode",
    "SearchSession",
    "StrategyConfig",
    "beam_search",
    "best_of_n",
    "generate_cot",
    "mcts",
    "parse_features",
    "run_strategy",
    "score_features",
    "uct_score",
]
