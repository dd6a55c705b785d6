"""Downstream recommendation tasks, ranking metrics, and the count fit.

Three tasks: listwise direct ranking (DR), the same with a one-shot
example (ICL), and single next-item prediction (NIP). Rankings that are
not exact permutations of the candidate set score 0 on every metric by
default and are reported separately through the Valid Rate; set
``exclude_noncompliant`` to average over compliant rankings only.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

from .dataset import CandidateSet, ItemCatalog, UserSplit, sample_candidates
from .gateway.core import Gateway, user_request
from .prompts import render_icl_example, render_nip_prompt, render_ranking_prompt
from .rng import derive_seed
from .search.features import Feature

logger = logging.getLogger(__name__)

DIRECT_RANKING = "direct_ranking"
IN_CONTEXT_LEARNING = "in_context_learning"
NEXT_ITEM_PREDICTION = "next_item_prediction"
TASK_KINDS = (DIRECT_RANKING, IN_CONTEXT_LEARNING, NEXT_ITEM_PREDICTION)


@dataclass
class RecTask:
    kind: str
    one_shot_example: tuple[UserSplit, CandidateSet] | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if (self.one_shot_example is not None) != (self.kind == IN_CONTEXT_LEARNING):
            raise ValueError("one_shot_example is required exactly for in_context_learning")


@dataclass
class RankingOutput:
    ordered_items: list[str]
    compliant: bool
    raw_text: str


@dataclass
class RepeatMetrics:
    valid_rate: float
    ndcg_at: dict[int, float] = field(default_factory=dict)
    hit_at: dict[int, float] = field(default_factory=dict)
    nip_hit: float | None = None


@dataclass
class EvalResult:
    task_kind: str
    valid_rate: float
    ndcg_at: dict[int, float]
    hit_at: dict[int, float]
    nip_hit: float | None
    repeats: int
    per_repeat: list[RepeatMetrics]

    def to_dict(self) -> dict:
        return {
            "task": self.task_kind,
            "valid_rate": self.valid_rate,
            "ndcg_at": {str(k): v for k, v in self.ndcg_at.items()},
            "hit_at": {str(k): v for k, v in self.hit_at.items()},
            "nip_hit": self.nip_hit,
            "repeats": self.repeats,
            "per_repeat": [
                {
                    "valid_rate": r.valid_rate,
                    "ndcg_at": {str(k): v for k, v in r.ndcg_at.items()},
                    "hit_at": {str(k): v for k, v in r.hit_at.items()},
                    "nip_hit": r.nip_hit,
                }
                for r in self.per_repeat
            ],
        }


@dataclass
class CorrelationFit:
    points: list[tuple[float, float, str]]
    slope: float
    intercept: float
    r: float


def build_rec_prompt(
    task: RecTask,
    split: UserSplit,
    features: list[Feature] | None,
    candidates: CandidateSet,
    catalog: ItemCatalog,
) -> str:
    """Render the task prompt, with the feature section when provided."""
    pairs = [(f.name, f.definition) for f in features] if features else None
    if task.kind == NEXT_ITEM_PREDICTION:
        return render_nip_prompt(split, candidates, catalog, pairs)
    example = ""
    if task.kind == IN_CONTEXT_LEARNING:
        example_split, example_candidates = task.one_shot_example
        example = render_icl_example(example_split, example_candidates, catalog)
    return render_ranking_prompt(split, candidates, catalog, pairs, example=example)


def _indices_from_text(raw: str, c: int) -> list[int]:
    return [int(t) for t in re.findall(r"\d+", raw) if 1 <= int(t) <= c]


def _items_by_title(raw: str, candidates: CandidateSet, catalog: ItemCatalog) -> list[str]:
    lowered = raw.lower()
    hits = []
    for iid in candidates.candidates:
        pos = lowered.find(catalog.title(iid).lower())
        if pos >= 0:
            hits.append((pos, iid))
    return [iid for _, iid in sorted(hits)]


def parse_ranking(
    raw: str,
    candidates: CandidateSet,
    catalog: ItemCatalog | None = None,
    expect_single: bool = False,
) -> RankingOutput:
    """Extract an item ranking by candidate indices, or titles as fallback.

    Compliance for a ranking means an exact permutation of the candidate
    set; for next-item prediction it means exactly one resolvable item.
    Non-compliance is data, not an error.
    """
    c = len(candidates.candidates)
    indices = _indices_from_text(raw, c)
    if indices:
        ordered = [candidates.candidates[i - 1] for i in indices]
    elif catalog is not None:
        ordered = _items_by_title(raw, candidates, catalog)
    else:
        ordered = []
    if expect_single:
        ordered = ordered[:1]
        return RankingOutput(ordered_items=ordered, compliant=bool(ordered), raw_text=raw)
    compliant = len(ordered) == c and set(ordered) == set(candidates.candidates)
    return RankingOutput(ordered_items=ordered, compliant=compliant, raw_text=raw)


def ndcg_at_k(ranking: RankingOutput, truth: str, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(1+rank) inside the cutoff.

    Non-compliant rankings score 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranking.compliant or truth not in ranking.ordered_items:
        return 0.0
    rank = ranking.ordered_items.index(truth) + 1
    if rank > k:
        return 0.0
    return 1.0 / math.log2(1 + rank)


def hit_at_k(ranking: RankingOutput, truth: str, k: int) -> int:
    """1 iff the truth is within the top k of a compliant ranking."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranking.compliant:
        return 0
    return int(truth in ranking.ordered_items[:k])


def evaluate(
    users: list[UserSplit],
    catalog: ItemCatalog,
    task: RecTask,
    gateway: Gateway,
    model_id: str,
    features_by_user: dict[str, list[Feature]] | None = None,
    repeats: int = 3,
    seeds: list[int] | None = None,
    c: int = 20,
    ks: tuple[int, ...] = (5, 10),
    temperature: float = 0.0,
    max_tokens: int = 512,
    exclude_noncompliant: bool = False,
) -> EvalResult:
    """Run one task over all users for each repeat and average.

    Each repeat draws fresh candidate sets from its own seed; per-user
    metrics are averaged over users within a repeat, then over repeats.
    """
    if seeds is None:
        seeds = list(range(repeats))
    if len(seeds) != repeats:
        raise ValueError(f"need {repeats} seeds, got {len(seeds)}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not users:
        raise ValueError("users must be non-empty")

    is_nip = task.kind == NEXT_ITEM_PREDICTION
    per_repeat: list[RepeatMetrics] = []
    for repeat, seed in enumerate(seeds):
        compliant_flags: list[bool] = []
        ndcg_rows: dict[int, list[float]] = {k: [] for k in ks}
        hit_rows: dict[int, list[float]] = {k: [] for k in ks}
        nip_rows: list[float] = []
        for split in users:
            cand_seed = derive_seed(seed, "candidates", split.user_id)
            candidates = sample_candidates(split, catalog, c, cand_seed)
            features = (features_by_user or {}).get(split.user_id)
            prompt = build_rec_prompt(task, split, features, candidates, catalog)
            response = gateway.complete(
                user_request(model_id, prompt, temperature=temperature, max_tokens=max_tokens)
            )
            ranking = parse_ranking(
                response.text, candidates, catalog=catalog, expect_single=is_nip
            )
            compliant_flags.append(ranking.compliant)
            if exclude_noncompliant and not ranking.compliant:
                continue
            if is_nip:
                hit = int(
                    ranking.compliant and ranking.ordered_items[0] == candidates.ground_truth
                )
                nip_rows.append(float(hit))
            else:
                for k in ks:
                    ndcg_rows[k].append(ndcg_at_k(ranking, candidates.ground_truth, k))
                    hit_rows[k].append(float(hit_at_k(ranking, candidates.ground_truth, k)))
        per_repeat.append(
            RepeatMetrics(
                valid_rate=_mean([float(f) for f in compliant_flags]),
                ndcg_at={k: _mean(v) for k, v in ndcg_rows.items()} if not is_nip else {},
                hit_at={k: _mean(v) for k, v in hit_rows.items()} if not is_nip else {},
                nip_hit=_mean(nip_rows) if is_nip else None,
            )
        )
        logger.info("repeat %d/%d done for task %s", repeat + 1, repeats, task.kind)

    return EvalResult(
        task_kind=task.kind,
        valid_rate=_mean([r.valid_rate for r in per_repeat]),
        ndcg_at={k: _mean([r.ndcg_at[k] for r in per_repeat]) for k in ks} if not is_nip else {},
        hit_at={k: _mean([r.hit_at[k] for r in per_repeat]) for k in ks} if not is_nip else {},
        nip_hit=_mean([r.nip_hit for r in per_repeat]) if is_nip else None,
        repeats=repeats,
        per_repeat=per_repeat,
    )


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def fit_correlation(
    points: list[tuple[float, float]], labels: list[str] | None = None
) -> CorrelationFit:
    """OLS of metric against log10(count), plus the Pearson r."""
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    xs = [math.log10(count) for count, _ in points]
    ys = [metric for _, metric in points]
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    if sxx == 0:
        raise ValueError("degenerate fit: all counts equal")
    slope = sxy / sxx
    intercept = mean_y - slope * mean_x
    r = sxy / math.sqrt(sxx * syy) if syy > 0 else 0.0
    if labels is None:
        labels = ["" for _ in points]
    return CorrelationFit(
        points=[(x, y, lab) for x, y, lab in zip(xs, ys, labels)],
        slope=slope,
        intercept=intercept,
        r=r,
    )


def relative_improvement(new: float, baseline: float) -> float:
    """Percent improvement of ``new`` over ``baseline``."""
    if baseline == 0:
        raise ValueError("baseline must be nonzero")
    return (new - baseline) / baseline * 100.0
