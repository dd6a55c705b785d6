"""Search strategies: CoT, reward scoring, Best-of-N, Beam, MCTS, UCT."""

import json
import math

import pytest

from recfeat.dataset import partition_preferences
from recfeat.gateway import DeterministicMockBackend, Gateway, ScriptedChatBackend
from recfeat.rng import derive_seed
from recfeat.search import (
    SearchNode,
    SearchSession,
    StrategyConfig,
    beam_search,
    best_of_n,
    generate_cot,
    mcts,
    uct_score,
)
from recfeat.search.reward import score_features

from conftest import make_split


SIX_KEY_OBJECT = {
    "Instrument Quality": "Perceived quality of the components.",
    "Usability": "How easy the product is to use or install.",
    "Sound Characteristics": "Tonal qualities and output levels.",
    "Brand Reputation": "Trust associated with the brand.",
    "User Preferences": "Alignment with the user's style.",
    "Component Functionality": "Functional aspects such as reliability.",
}

ALL_TRUE = "reward: all true"


def make_session(policy_responder, reward_responder=None):
    if reward_responder is None:
        reward_responder = _all_true_reward
    return SearchSession(
        policy=Gateway(ScriptedChatBackend(policy_responder)),
        reward=Gateway(ScriptedChatBackend(reward_responder)),
        policy_model_id="pol",
        reward_model_id="rew",
    )


def _prompt_of(request):
    return "\n".join(content for _, content in request.messages)


def _count_features(prompt):
    tail = prompt.split("Candidate features:", 1)[-1]
    return sum(1 for line in tail.splitlines() if line[:1].isdigit())


def _all_true_reward(request):
    return json.dumps([True] * _count_features(_prompt_of(request)))


@pytest.fixture
def profile(split):
    return partition_preferences(split, threshold=4)


class TestGenerateCot:
    def test_six_key_object(self, profile, catalog):
        session = make_session(lambda r: json.dumps(SIX_KEY_OBJECT))
        fs = generate_cot(session, profile, catalog)
        assert [f.name for f in fs.features] == list(SIX_KEY_OBJECT)
        assert not fs.failed
        assert all(f.provenance.strategy == "cot" for f in fs.features)

    def test_prose_twice_fails_empty(self, profile, catalog):
        session = make_session(lambda r: "nothing that looks like a feature list")
        fs = generate_cot(session, profile, catalog)
        assert fs.failed and fs.features == []
        assert session.policy.backend.calls == 2  # one retry

    def test_parse_retry_uses_second_reply(self, profile, catalog):
        replies = iter(["just prose", '{"Color": "palette"}'])
        session = make_session(lambda r: next(replies))
        fs = generate_cot(session, profile, catalog)
        assert not fs.failed
        assert fs.features[0].name == "Color"
        assert session.stats["policy_parse_retries"] == 1

    def test_prompt_contains_every_item_and_rating(self, profile, catalog):
        seen = {}

        def responder(request):
            seen["prompt"] = _prompt_of(request)
            return json.dumps(SIX_KEY_OBJECT)

        generate_cot(make_session(responder), profile, catalog)
        prompt = seen["prompt"]
        for item_id, rating in profile.liked + profile.disliked:
            assert catalog.title(item_id) in prompt
            assert f", {rating}." in prompt


class TestScoreFeatures:
    def test_all_true(self, profile, catalog):
        session = make_session(lambda r: "unused")
        fs = generate_cot(make_session(lambda r: json.dumps(SIX_KEY_OBJECT)), profile, catalog)
        score = score_features(session, fs.features[:4], profile, catalog)
        assert score.valid_count == 4
        assert score.per_feature == [True] * 4

    def test_aligned_mixed_verdicts(self, profile, catalog):
        session = make_session(lambda r: "unused", lambda r: "[true, false, true]")
        fs = generate_cot(make_session(lambda r: json.dumps(SIX_KEY_OBJECT)), profile, catalog)
        score = score_features(session, fs.features[:3], profile, catalog)
        assert score.valid_count == 2
        assert score.per_feature == [True, False, True]

    def test_garbled_then_valid_on_retry(self, profile, catalog):
        replies = iter(["cannot say", "[true, true]"])
        session = make_session(lambda r: "unused", lambda r: next(replies))
        fs = generate_cot(make_session(lambda r: json.dumps(SIX_KEY_OBJECT)), profile, catalog)
        score = score_features(session, fs.features[:2], profile, catalog)
        assert score.per_feature == [True, True]
        assert session.stats["reward_parse_retries"] == 1

    def test_garbled_twice_defaults_invalid(self, profile, catalog):
        session = make_session(lambda r: "unused", lambda r: "no verdict")
        fs = generate_cot(make_session(lambda r: json.dumps(SIX_KEY_OBJECT)), profile, catalog)
        score = score_features(session, fs.features[:2], profile, catalog)
        assert score.per_feature == [False, False]

    def test_empty_set_short_circuits(self, profile, catalog):
        backend = ScriptedChatBackend(lambda r: "unused")
        session = SearchSession(
            policy=Gateway(backend), reward=Gateway(backend),
            policy_model_id="p", reward_model_id="r",
        )
        score = score_features(session, [], profile, catalog)
        assert score.valid_count == 0 and score.per_feature == []
        assert backend.calls == 0


def bon_sample_index(config, profile, request):
    """Recover the Best-of-N sample index from the request seed."""
    for i in range(config.n):
        if request.seed == derive_seed(config.rng_seed, "bon", profile.user_id, i):
            return i
    return None


def make_bon_session(counts, config, profile):
    """Policy emits counts[i] features for sample i; reward says all true."""

    def policy(request):
        i = bon_sample_index(config, profile, request)
        return json.dumps({f"S{i} F{j}": f"definition {j}" for j in range(counts[i])})

    return make_session(policy)


class TestBestOfN:
    def test_argmax_of_scripted_counts(self, profile, catalog):
        config = StrategyConfig(n=3, m=1, rng_seed=11)
        session = make_bon_session([2, 5, 3], config, profile)
        fs = best_of_n(session, profile, catalog, config)
        assert len(fs.features) == 5
        assert all(f.name.startswith("S1 ") for f in fs.features)
        assert all(f.valid for f in fs.features)
        assert all(f.provenance.step_index == 1 for f in fs.features)

    def test_tie_goes_to_lowest_index(self, profile, catalog):
        config = StrategyConfig(n=3, m=1, rng_seed=11)
        session = make_bon_session([4, 4, 1], config, profile)
        fs = best_of_n(session, profile, catalog, config)
        assert all(f.name.startswith("S0 ") for f in fs.features)

    def test_n1_equals_cot_plus_filter(self, profile, catalog):
        config = StrategyConfig(n=1, m=1, rng_seed=5)

        def policy(request):
            return json.dumps(SIX_KEY_OBJECT)

        def reward(request):
            n = _count_features(_prompt_of(request))
            return json.dumps([k % 2 == 0 for k in range(n)])

        fs = best_of_n(make_session(policy, reward), profile, catalog, config)
        cot = generate_cot(make_session(policy, reward), profile, catalog)
        session = make_session(policy, reward)
        score = score_features(session, cot.features, profile, catalog)
        expected = [f.name for f, v in zip(cot.features, score.per_feature) if v]
        assert [f.name for f in fs.features] == expected

    def test_all_samples_fail_parsing(self, profile, catalog):
        config = StrategyConfig(n=3, m=1, rng_seed=2)
        fs = best_of_n(make_session(lambda r: "prose only"), profile, catalog, config)
        assert fs.failed and fs.features == []


class TestBeamSearch:
    def test_bookkeeping_n8_m2(self, profile, catalog):
        mock = DeterministicMockBackend()
        session = SearchSession(
            policy=Gateway(mock), reward=Gateway(mock),
            policy_model_id="p", reward_model_id="r",
        )
        config = StrategyConfig(n=8, m=2, max_features=3, rng_seed=3)
        trace = []
        beam_search(session, profile, catalog, config, trace=trace)
        assert trace, "at least one round must be traced"
        for round_rec in trace:
            assert round_rec["post_expansion"] == 8
            assert round_rec["post_prune"] == 4

    def test_max_features_1_matches_best_of_n_over_single_features(self, profile, catalog):
        # With one-feature outputs on both sides and rewards keyed on the
        # feature name, both strategies must pick the same winner.
        config = StrategyConfig(n=4, m=1, max_features=1, rng_seed=9)
        names = ["Alpha", "Bravo", "Charlie", "Delta"]
        calls = {"n": 0}

        def policy(request):
            name = names[calls["n"] % 4]
            calls["n"] += 1
            return f"{name}: definition of {name}"

        def reward(request):
            prompt = _prompt_of(request)
            return json.dumps(["Charlie" in prompt] * max(_count_features(prompt), 1))

        beam_fs = beam_search(make_session(policy, reward), profile, catalog, config)
        calls["n"] = 0
        bon_fs = best_of_n(make_session(policy, reward), profile, catalog, config)
        assert [f.name for f in beam_fs.features] == ["Charlie"]
        assert [f.name for f in bon_fs.features] == ["Charlie"]

    def test_dominant_beam_supplies_final_output(self, profile, catalog):
        config = StrategyConfig(n=4, m=2, max_features=3, rng_seed=13)
        roots = {}

        def policy(request):
            prompt = _prompt_of(request)
            if "(none yet)" in prompt:
                slot = len(roots)
                roots[request.seed] = slot
                return f"Root {slot}: starting point {slot}"
            return f"Ext {request.seed}: extension feature"

        def reward(request):
            prompt = _prompt_of(request)
            n = max(_count_features(prompt), 1)
            return json.dumps([True] * n if "Root 3" in prompt else [False] * n)

        fs = beam_search(make_session(policy, reward), profile, catalog, config)
        assert fs.features, "dominant beam should produce features"
        assert fs.features[0].name == "Root 3"

    def test_no_beam_exceeds_max_features(self, profile, catalog):
        mock = DeterministicMockBackend()
        session = SearchSession(
            policy=Gateway(mock), reward=Gateway(mock),
            policy_model_id="p", reward_model_id="r",
        )
        config = StrategyConfig(n=4, m=2, max_features=2, rng_seed=1)
        fs = beam_search(session, profile, catalog, config)
        assert len(fs.features) <= 2

    def test_n_not_divisible_by_m_rejected(self):
        with pytest.raises(ValueError):
            StrategyConfig(n=8, m=3)


class TestUct:
    def test_unvisited_sentinel(self):
        assert uct_score(SearchNode(), 5, 1.4) == math.inf

    def test_exploitation_only(self):
        node = SearchNode(visits=2, total_reward=4)
        assert uct_score(node, 2, 0.000001) == pytest.approx(2.0, abs=1e-5)

    def test_formula_value(self):
        node = SearchNode(visits=2, total_reward=4)
        assert uct_score(node, 8, 1.0) == pytest.approx(3.0196670, abs=1e-4)

    def test_unvisited_precedes_visited_siblings(self):
        parent = SearchNode(visits=10)
        seen = SearchNode(visits=9, total_reward=100.0)
        fresh = SearchNode()
        best = max([seen, fresh], key=lambda n: uct_score(n, parent.visits, 1.4))
        assert best is fresh


def scripted_branch_session():
    """Root expands to Branch A then Branch B; A rollouts reward 3, B reward 1."""
    counters = {"root": 0, "sub": 0}

    def policy(request):
        prompt = _prompt_of(request)
        if "(none yet)" in prompt:
            counters["root"] += 1
            return ("Branch A: the first direction" if counters["root"] == 1
                    else "Branch B: the second direction")
        counters["sub"] += 1
        side = "A" if "- Branch A:" in prompt else "B"
        return f"{side} Sub {counters['sub']}: a deeper look"

    def reward(request):
        prompt = _prompt_of(request)
        n = max(_count_features(prompt), 1)
        if "Branch A" in prompt:
            return json.dumps([True] * n)
        return json.dumps([True] + [False] * (n - 1))

    return make_session(policy, reward)


class MiniMcts:
    """Independent minimal MCTS over abstract (branch, depth) states."""

    class Node:
        def __init__(self, branch, depth):
            self.branch, self.depth = branch, depth
            self.visits = 0
            self.reward = 0.0
            self.children = []

        def terminal(self):
            return self.depth >= 3

    def __init__(self, c=1.414, width=2):
        self.c, self.width = c, width
        self.root = self.Node(None, 0)
        self.expansions = 0

    def _uct(self, node, parent):
        if node.visits == 0:
            return math.inf
        return node.reward / node.visits + self.c * math.sqrt(
            math.log(parent.visits) / node.visits
        )

    def _next_child(self, node):
        if node.depth == 0 and node.branch is None:
            self.expansions += 1
            return self.Node("A" if self.expansions == 1 else "B", 1)
        return self.Node(node.branch, node.depth + 1)

    def run(self, iterations):
        for _ in range(iterations):
            node, path = self.root, [self.root]
            while not node.terminal() and len(node.children) >= self.width:
                node = max(node.children, key=lambda ch: self._uct(ch, node))
                path.append(node)
            if not node.terminal():
                child = self._next_child(node)
                node.children.append(child)
                path.append(child)
                node = child
            reward = 3.0 if node.branch == "A" else 1.0
            for visited in path:
                visited.visits += 1
                visited.reward += reward
        return self.root


class TestMcts:
    def test_single_iteration_trace(self, profile, catalog):
        session = scripted_branch_session()
        config = StrategyConfig(n=2, m=2, mcts_iterations=1, max_features=3, rng_seed=1)
        events = []
        mcts(session, profile, catalog, config,
             iteration_hook=lambda root, path, reward: events.append((root, path, reward)))
        root, path, reward = events[0]
        assert root.visits == 1
        assert len(path) == 2  # root plus the one expanded child
        assert all(node.visits == 1 for node in path)
        assert reward == 3.0

    def test_path_increment_property(self, profile, catalog):
        session = scripted_branch_session()
        config = StrategyConfig(n=2, m=2, mcts_iterations=12, max_features=3, rng_seed=4)
        previous = {}

        def snapshot(node, acc):
            acc[id(node)] = (node.visits, node.total_reward)
            for child in node.children:
                snapshot(child, acc)
            return acc

        def hook(root, path, reward):
            current = snapshot(root, {})
            changed = {
                k: (v[0] - previous.get(k, (0, 0.0))[0], v[1] - previous.get(k, (0, 0.0))[1])
                for k, v in current.items()
                if v != previous.get(k, (0, 0.0))
            }
            assert set(changed) == {id(n) for n in path}
            for dv, dr in changed.values():
                assert dv == 1
                assert dr == pytest.approx(reward)
            previous.clear()
            previous.update(current)

        mcts(session, profile, catalog, config, iteration_hook=hook)

    def test_branch_rewards_drive_visits_and_answer(self, profile, catalog):
        session = scripted_branch_session()
        config = StrategyConfig(n=2, m=2, mcts_iterations=50, uct_c=1.4,
                                max_features=3, rng_seed=21)
        roots = []
        fs = mcts(session, profile, catalog, config,
                  iteration_hook=lambda root, path, reward: roots.append(root))
        root = roots[-1]
        assert root.visits == 50
        branch_a, branch_b = root.children[0], root.children[1]
        assert branch_a.partial[0].name == "Branch A"
        assert branch_a.visits > branch_b.visits
        assert fs.features[0].name == "Branch A"
        # visits >= sum of child visits at every internal node
        stack = [root]
        while stack:
            node = stack.pop()
            assert node.visits >= sum(ch.visits for ch in node.children)
            stack.extend(node.children)

    def test_matches_independent_minimal_mcts(self, profile, catalog):
        session = scripted_branch_session()
        config = StrategyConfig(n=2, m=2, mcts_iterations=30, uct_c=1.414,
                                max_features=3, rng_seed=8)
        roots = []
        mcts(session, profile, catalog, config,
             iteration_hook=lambda root, path, reward: roots.append(root))
        real_root = roots[-1]
        mini_root = MiniMcts(c=1.414, width=2).run(30)
        assert real_root.visits == mini_root.visits
        real_a, real_b = real_root.children
        mini_a, mini_b = mini_root.children
        assert (real_a.visits, real_b.visits) == (mini_a.visits, mini_b.visits)
        assert real_a.total_reward == pytest.approx(mini_a.reward)

    def test_deterministic_under_seed(self, profile, catalog):
        mock = DeterministicMockBackend()
        config = StrategyConfig(n=2, m=2, mcts_iterations=6, max_features=3, rng_seed=77)
        results = []
        for _ in range(2):
            session = SearchSession(
                policy=Gateway(mock), reward=Gateway(mock),
                policy_model_id="p", reward_model_id="r",
            )
            fs = mcts(session, profile, catalog, config)
            results.append([f.name for f in fs.features])
        assert results[0] == results[1]
