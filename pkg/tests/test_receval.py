"""Ranking metrics, ranking parsing, evaluation loop, and the OLS fit."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recfeat.dataset import CandidateSet, sample_candidates
from recfeat.gateway import Gateway, ScriptedChatBackend
from recfeat.receval import (
    DIRECT_RANKING,
    IN_CONTEXT_LEARNING,
    NEXT_ITEM_PREDICTION,
    RankingOutput,
    RecTask,
    build_rec_prompt,
    evaluate,
    fit_correlation,
    hit_at_k,
    ndcg_at_k,
    parse_ranking,
    relative_improvement,
)
from recfeat.prompts import FEATURES_HEADER
from recfeat.search.features import Feature

from conftest import make_split


def candidates_of(n=20, truth_pos=0):
    items = [f"i{k:02d}" for k in range(1, n + 1)]
    truth = items[truth_pos]
    return CandidateSet(user_id="u1", candidates=items, ground_truth=truth, seed=0)


def ranking_with_truth_at(rank, n=20, truth_pos=None):
    cands = candidates_of(n, truth_pos=0)
    rest = [i for i in cands.candidates if i != cands.ground_truth]
    ordered = rest[: rank - 1] + [cands.ground_truth] + rest[rank - 1 :]
    return RankingOutput(ordered_items=ordered, compliant=True, raw_text=""), cands


def brute_force_ndcg(ordered, truth, k):
    """DCG over binary relevance divided by ideal DCG, summed explicitly."""
    dcg = 0.0
    for pos, item in enumerate(ordered[:k], start=1):
        rel = 1.0 if item == truth else 0.0
        dcg += (2**rel - 1) / math.log2(pos + 1)
    ideal = (2**1 - 1) / math.log2(2)
    return dcg / ideal


class TestMetrics:
    def test_rank1_is_perfect(self):
        ranking, cands = ranking_with_truth_at(1)
        assert ndcg_at_k(ranking, cands.ground_truth, 5) == 1.0
        assert hit_at_k(ranking, cands.ground_truth, 5) == 1

    def test_rank4_at_5(self):
        ranking, cands = ranking_with_truth_at(4)
        assert ndcg_at_k(ranking, cands.ground_truth, 5) == pytest.approx(
            0.4306766, abs=1e-6
        )

    def test_rank11_outside_cutoff(self):
        ranking, cands = ranking_with_truth_at(11)
        assert ndcg_at_k(ranking, cands.ground_truth, 10) == 0.0
        assert hit_at_k(ranking, cands.ground_truth, 10) == 0

    def test_hit_boundary_rank10(self):
        ranking, cands = ranking_with_truth_at(10)
        assert hit_at_k(ranking, cands.ground_truth, 10) == 1

    def test_noncompliant_scores_zero(self):
        ranking, cands = ranking_with_truth_at(1)
        ranking.compliant = False
        assert ndcg_at_k(ranking, cands.ground_truth, 5) == 0.0
        assert hit_at_k(ranking, cands.ground_truth, 5) == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            rank = int(rng.integers(1, 21))
            ranking, cands = ranking_with_truth_at(rank)
            for k in (5, 10):
                assert ndcg_at_k(ranking, cands.ground_truth, k) == pytest.approx(
                    brute_force_ndcg(ranking.ordered_items, cands.ground_truth, k),
                    abs=1e-12,
                )

    @given(st.integers(min_value=1, max_value=20), st.sampled_from([5, 10]))
    @settings(max_examples=60, deadline=None)
    def test_ndcg_le_hit_and_monotone(self, rank, k):
        ranking, cands = ranking_with_truth_at(rank)
        ndcg = ndcg_at_k(ranking, cands.ground_truth, k)
        hit = hit_at_k(ranking, cands.ground_truth, k)
        assert 0.0 <= ndcg <= hit <= 1.0
        if rank > 1:
            better, _ = ranking_with_truth_at(rank - 1)
            assert ndcg_at_k(better, cands.ground_truth, k) >= ndcg


class TestParseRanking:
    def test_full_permutation_compliant(self):
        cands = candidates_of(5)
        out = parse_ranking("Ranking: 3, 1, 5, 2, 4", cands)
        assert out.compliant
        assert out.ordered_items == [cands.candidates[i - 1] for i in [3, 1, 5, 2, 4]]

    def test_missing_one_noncompliant(self):
        out = parse_ranking("1, 2, 3, 4", candidates_of(5))
        assert not out.compliant

    def test_duplicate_noncompliant(self):
        out = parse_ranking("1, 1, 2, 3, 4", candidates_of(5))
        assert not out.compliant

    def test_title_fallback(self):
        from recfeat.dataset import ItemCatalog

        cat = ItemCatalog()
        cat.entries = {
            "a": ("Wooden Blocks", ""),
            "b": ("Plush Bear", ""),
            "c": ("Race Track", ""),
        }
        cands = CandidateSet("u", ["a", "b", "c"], "b", 0)
        raw = "Race Track, then Wooden Blocks, then Plush Bear"
        out = parse_ranking(raw, cands, catalog=cat)
        assert out.compliant
        assert out.ordered_items == ["c", "a", "b"]

    def test_no_catalog_no_indices_noncompliant(self):
        out = parse_ranking("nothing numeric here", candidates_of(4))
        assert not out.compliant and out.ordered_items == []

    def test_nip_single(self):
        cands = candidates_of(10)
        out = parse_ranking("Answer: 7", cands, expect_single=True)
        assert out.compliant
        assert out.ordered_items == [cands.candidates[6]]

    def test_nip_no_match(self):
        out = parse_ranking("no idea", candidates_of(10), expect_single=True)
        assert not out.compliant and out.ordered_items == []


class TestBuildPrompt:
    def test_without_features_no_header(self, catalog, split):
        cands = sample_candidates(split, catalog, 10, 3)
        prompt = build_rec_prompt(RecTask(DIRECT_RANKING), split, None, cands, catalog)
        assert FEATURES_HEADER not in prompt

    def test_with_features_names_verbatim(self, catalog, split):
        cands = sample_candidates(split, catalog, 10, 3)
        features = [
            Feature(name=f"Feat {k}", definition=f"def {k}", valid=True) for k in range(3)
        ]
        prompt = build_rec_prompt(RecTask(DIRECT_RANKING), split, features, cands, catalog)
        assert FEATURES_HEADER in prompt
        for f in features:
            assert f.name in prompt

    def test_candidates_in_candidate_order(self, catalog, split):
        cands = sample_candidates(split, catalog, 10, 3)
        prompt = build_rec_prompt(RecTask(DIRECT_RANKING), split, None, cands, catalog)
        positions = [prompt.find(f"{i}. {catalog.title(iid)}")
                     for i, iid in enumerate(cands.candidates, start=1)]
        assert all(p >= 0 for p in positions)
        assert positions == sorted(positions)

    def test_icl_example_answer_precedes_query(self, catalog):
        example_split = make_split("u9", n_train=4, first_item=10)
        example_cands = sample_candidates(example_split, catalog, 8, 5)
        split = make_split("u1")
        cands = sample_candidates(split, catalog, 8, 4)
        task = RecTask(IN_CONTEXT_LEARNING, one_shot_example=(example_split, example_cands))
        prompt = build_rec_prompt(task, split, None, cands, catalog)
        answer_index = example_cands.candidates.index(example_cands.ground_truth) + 1
        answer_pos = prompt.find(f"Answer: {answer_index}")
        query_pos = prompt.find("Now complete the real task.")
        assert 0 <= answer_pos < query_pos

    def test_icl_requires_example(self):
        with pytest.raises(ValueError):
            RecTask(IN_CONTEXT_LEARNING)
        with pytest.raises(ValueError):
            RecTask(DIRECT_RANKING, one_shot_example=("x", "y"))


def scripted_eval_gateway(responder):
    return Gateway(ScriptedChatBackend(responder))


def _candidate_count(request):
    prompt = request.messages[0][1]
    return int(prompt.split("Here are ", 1)[1].split(" candidate", 1)[0])


class TestEvaluate:
    def _users(self, n=3):
        return [make_split(f"u{k}", n_train=4, first_item=1 + 2 * k) for k in range(n)]

    def test_identity_ranking_compliant_and_bounded(self, catalog):
        users = self._users()

        def responder(request):
            return ", ".join(str(i) for i in range(1, _candidate_count(request) + 1))

        result = evaluate(
            users, catalog, RecTask(DIRECT_RANKING), scripted_eval_gateway(responder),
            "rec", repeats=2, seeds=[1, 2], c=8,
        )
        assert result.valid_rate == 1.0
        assert 0.0 <= result.ndcg_at[5] <= result.hit_at[5] <= 1.0
        assert result.repeats == 2 and len(result.per_repeat) == 2

    def test_truth_first_gives_perfect_metrics(self, catalog):
        from recfeat.rng import derive_seed

        user = self._users(1)[0]
        seed = 9
        cands = sample_candidates(user, catalog, 20, derive_seed(seed, "candidates", user.user_id))
        truth_index = cands.candidates.index(cands.ground_truth) + 1

        def responder(request):
            rest = [i for i in range(1, 21) if i != truth_index]
            return ", ".join(map(str, [truth_index] + rest))

        result = evaluate(
            [user], catalog, RecTask(DIRECT_RANKING), scripted_eval_gateway(responder),
            "rec", repeats=1, seeds=[seed], c=20,
        )
        assert result.valid_rate == 1.0
        assert result.ndcg_at[5] == 1.0
        assert result.hit_at[5] == 1.0

    def test_scripted_rank6_metrics(self, catalog):
        from recfeat.rng import derive_seed

        user = self._users(1)[0]
        seed = 9
        cands = sample_candidates(user, catalog, 20, derive_seed(seed, "candidates", user.user_id))
        truth_index = cands.candidates.index(cands.ground_truth) + 1

        def responder(request):
            rest = [i for i in range(1, 21) if i != truth_index]
            order = rest[:5] + [truth_index] + rest[5:]
            return ", ".join(map(str, order))

        result = evaluate(
            [user], catalog, RecTask(DIRECT_RANKING), scripted_eval_gateway(responder),
            "rec", repeats=1, seeds=[seed], c=20,
        )
        assert result.ndcg_at[5] == 0.0
        assert result.hit_at[10] == 1.0
        assert result.ndcg_at[10] == pytest.approx(1 / math.log2(7), abs=1e-9)

    def test_mean_over_repeats(self):
        from recfeat.receval import EvalResult, RepeatMetrics

        per = [
            RepeatMetrics(valid_rate=1.0, ndcg_at={10: v}, hit_at={10: 1.0})
            for v in (0.4, 0.5, 0.6)
        ]
        mean = sum(r.ndcg_at[10] for r in per) / 3
        assert mean == pytest.approx(0.5)

    def test_seeds_length_must_match_repeats(self, catalog):
        with pytest.raises(ValueError):
            evaluate(
                self._users(1), catalog, RecTask(DIRECT_RANKING),
                scripted_eval_gateway(lambda r: ""), "rec", repeats=2, seeds=[1],
            )

    def test_valid_rate_counts_noncompliant(self, catalog):
        users = self._users(2)
        flip = {"n": 0}

        def responder(request):
            flip["n"] += 1
            if flip["n"] % 2 == 0:
                return "no ranking at all"
            c = int(request.messages[0][1].split("Here are ", 1)[1].split(" candidate", 1)[0])
            return ", ".join(str(i) for i in range(1, c + 1))

        result = evaluate(
            users, catalog, RecTask(DIRECT_RANKING), scripted_eval_gateway(responder),
            "rec", repeats=1, seeds=[4], c=8,
        )
        assert result.valid_rate == pytest.approx(0.5)

    def test_nip_hit(self, catalog):
        user = self._users(1)[0]
        from recfeat.rng import derive_seed

        seed = 13
        cands = sample_candidates(user, catalog, 10, derive_seed(seed, "candidates", user.user_id))
        truth_index = cands.candidates.index(cands.ground_truth) + 1

        result = evaluate(
            [user], catalog, RecTask(NEXT_ITEM_PREDICTION),
            scripted_eval_gateway(lambda r: f"Answer: {truth_index}"),
            "rec", repeats=1, seeds=[seed], c=10,
        )
        assert result.nip_hit == 1.0
        assert result.ndcg_at == {}


class TestFitCorrelation:
    def test_exact_colinearity(self):
        fit = fit_correlation([(10, 0.1), (100, 0.2), (1000, 0.3)])
        assert fit.slope == pytest.approx(0.1, abs=1e-12)
        assert fit.r == pytest.approx(1.0, abs=1e-12)

    def test_two_points(self):
        fit = fit_correlation([(10, 0.5), (1000, 0.1)])
        assert fit.r == pytest.approx(-1.0, abs=1e-12)
        assert fit.intercept == pytest.approx(0.5 - fit.slope * 1.0, abs=1e-12)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(5)
        counts = rng.integers(10, 100000, size=20)
        metrics = rng.uniform(0, 1, size=20)
        fit = fit_correlation(list(zip(counts.tolist(), metrics.tolist())))
        x = np.log10(counts.astype(float))
        a = np.vstack([x, np.ones_like(x)]).T
        slope_ref, intercept_ref = np.linalg.lstsq(a, metrics, rcond=None)[0]
        r_ref = np.corrcoef(x, metrics)[0, 1]
        assert fit.slope == pytest.approx(slope_ref, abs=1e-9)
        assert fit.intercept == pytest.approx(intercept_ref, abs=1e-9)
        assert fit.r == pytest.approx(r_ref, abs=1e-9)

    def test_degenerate_all_equal_x(self):
        with pytest.raises(ValueError):
            fit_correlation([(10, 0.1), (10, 0.2)])


class TestImprovement:
    def test_paper_shaped_fixture(self):
        assert relative_improvement(48.86, 43.50) == pytest.approx(12.32, abs=0.01)

    def test_scale_invariance(self):
        assert relative_improvement(0.4886, 0.4350) == pytest.approx(
            relative_improvement(48.86, 43.50), abs=1e-9
        )
