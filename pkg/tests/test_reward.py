"""
Tests for the FrugalHop reward module.
"""

import math
import itertools
import unittest

import numpy as np
from hypothesis import given, settings as hyp_settings, strategies as st

from FrugalHop.reward import (
    RewardCase,
    RewardConfig,
    build_grpo_group,
    combined_reward,
    compute_h_star,
    format_reward,
    group_advantages,
    h_star_histogram,
    reference_recalls,
    score_rollout,
    stop_reward,
)
from FrugalHop.rollout import RolloutConfig, run_rollout

from .support import FINISH, FailingRetriever, StaticRetriever, doc, example, scripted_policy, search

CFG = RewardConfig(r_max=2.0, alpha=1.0, tau=1.0, budget=6)
LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


def brute_h_star(trajectory, reference_final=None, budget=None):
    """Smallest prefix length whose recall reaches the target."""
    budget = budget or len(trajectory)
    target = trajectory[-1] if reference_final is None else reference_final
    candidates = [h for h in range(1, len(trajectory) + 1) if trajectory[h - 1] >= target]
    return min(candidates) if candidates else budget


class TestComputeHStar(unittest.TestCase):
    """Test optimal rollout length."""

    def test_examples(self):
        """Test the documented h* examples."""
        self.assertEqual(compute_h_star([0.5, 1.0, 1.0, 1.0, 1.0, 1.0]), 2)
        self.assertEqual(compute_h_star([0.0, 0.0, 0.0]), 1)
        self.assertEqual(compute_h_star([0.5, 0.5, 1.0], reference_final=1.0), 3)
        self.assertEqual(compute_h_star([0.5, 0.5, 1.0], reference_final=0.5), 1)

    def test_unreached_reference_gives_budget(self):
        """Test that an unreachable reference level maps to B."""
        self.assertEqual(compute_h_star([0.5, 0.5], reference_final=1.0, budget=6), 6)

    def test_rejects_decreasing(self):
        """Test that a decreasing trajectory is rejected."""
        with self.assertRaises(ValueError):
            compute_h_star([1.0, 0.5])

    def test_rejects_empty(self):
        """Test that an empty trajectory is rejected."""
        with self.assertRaises(ValueError):
            compute_h_star([])

    def test_matches_enumeration(self):
        """Test every monotone trajectory up to length 6 against brute force."""
        for length in range(1, 7):
            for trajectory in itertools.combinations_with_replacement(LEVELS, length):
                trajectory = list(trajectory)
                self.assertEqual(compute_h_star(trajectory), brute_h_star(trajectory))
                for level in LEVELS:
                    self.assertEqual(compute_h_star(trajectory, level, 6), brute_h_star(trajectory, level, 6))


class TestStopReward(unittest.TestCase):
    """Test the three reward cases."""

    def test_perfect(self):
        """Test PERFECT at h* = h_term = 2."""
        case, reward = stop_reward(2, 2, 1.0, CFG)
        self.assertEqual(case, RewardCase.PERFECT)
        self.assertAlmostEqual(reward, 2.3333, places=4)

    def test_late_small_overshoot(self):
        """Test LATE at a one-hop overshoot."""
        case, reward = stop_reward(3, 2, 1.0, CFG)
        self.assertEqual(case, RewardCase.LATE)
        self.assertAlmostEqual(reward, math.log(5), places=9)
        self.assertAlmostEqual(reward, 1.6094, places=4)

    def test_late_large_overshoot(self):
        """Test LATE at a five-hop overshoot."""
        case, reward = stop_reward(6, 1, 1.0, CFG)
        self.assertEqual(case, RewardCase.LATE)
        self.assertAlmostEqual(reward, -1.6094, places=4)

    def test_early(self):
        """Test EARLY when stopping before the evidence is complete."""
        case, reward = stop_reward(1, 5, 0.4, CFG)
        self.assertEqual(case, RewardCase.EARLY)
        self.assertAlmostEqual(reward, -0.6931, places=4)

    def test_unanswerable_at_h_star(self):
        """Test that stopping at h* without reaching tau gives zero."""
        case, reward = stop_reward(3, 3, 0.5, CFG)
        self.assertEqual(case, RewardCase.EARLY)
        self.assertEqual(reward, 0.0)

    def test_late_clamped(self):
        """Test that LATE rewards are clamped to [-r_max, r_max]."""
        cfg = RewardConfig(r_max=1.0, budget=20)
        self.assertEqual(stop_reward(2, 1, 1.0, cfg)[1], 1.0)
        self.assertEqual(stop_reward(20, 1, 1.0, cfg)[1], -1.0)

    def test_preconditions(self):
        """Test out-of-range inputs."""
        with self.assertRaises(ValueError):
            stop_reward(0, 1, 1.0, CFG)
        with self.assertRaises(ValueError):
            stop_reward(7, 1, 1.0, CFG)
        with self.assertRaises(ValueError):
            stop_reward(1, 1, 1.5, CFG)

    def test_late_decreasing_in_delta(self):
        """Test that the unclamped LATE reward falls as the overshoot grows."""
        cfg = RewardConfig(r_max=100.0, budget=6)
        rewards = [stop_reward(h_term, 1, 1.0, cfg)[1] for h_term in range(2, 7)]
        self.assertTrue(all(a > b for a, b in zip(rewards, rewards[1:])))

    def test_perfect_bonus_increasing_in_h_star(self):
        """Test that PERFECT pays more for longer optimal rollouts."""
        rewards = [stop_reward(h, h, 1.0, CFG)[1] for h in range(1, 7)]
        self.assertTrue(all(a < b for a, b in zip(rewards, rewards[1:])))

    @hyp_settings(max_examples=1000, deadline=None)
    @given(budget=st.integers(1, 12), data=st.data(), recall=st.floats(0.0, 1.0), tau=st.floats(0.0, 1.0),
           alpha=st.floats(0.0, 5.0), r_max=st.floats(0.01, 10.0),
           outcomes=st.lists(st.booleans(), min_size=1, max_size=12))
    def test_reward_band(self, budget, data, recall, tau, alpha, r_max, outcomes):
        """Test that every combined reward lies in the documented band."""
        h_term = data.draw(st.integers(1, budget))
        h_star = data.draw(st.integers(1, budget))
        cfg = RewardConfig(r_max=r_max, alpha=alpha, tau=tau, budget=budget)
        case, stop = stop_reward(h_term, h_star, recall, cfg)
        fmt = sum(1.0 if ok else -1.0 for ok in outcomes) / len(outcomes)
        combined = combined_reward(stop, fmt, cfg)
        low, high = cfg.band
        self.assertGreaterEqual(combined, low)
        self.assertLessEqual(combined, high)
        if case is RewardCase.EARLY:
            self.assertLessEqual(stop, 0.0)

    def test_reward_band_seeded_sweep(self):
        """Test the band and per-case bounds over 10,000 seeded random draws."""
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            budget = int(rng.integers(1, 13))
            h_term, h_star = (int(v) for v in rng.integers(1, budget + 1, size=2))
            recall = float(rng.choice([0.0, 0.5, 1.0, rng.random()]))
            cfg = RewardConfig(r_max=float(rng.uniform(0.01, 10.0)), alpha=float(rng.uniform(0.0, 5.0)),
                               tau=float(rng.random()), budget=budget)
            outcomes = rng.random(int(rng.integers(1, 13))) < rng.random()
            fmt = float(np.mean(np.where(outcomes, 1.0, -1.0)))
            case, stop = stop_reward(h_term, h_star, recall, cfg)
            low, high = cfg.band
            self.assertTrue(low <= combined_reward(stop, fmt, cfg) <= high)
            if case is RewardCase.EARLY:
                self.assertTrue(-cfg.r_max <= stop <= 0.0)
            elif case is RewardCase.LATE:
                self.assertTrue(-cfg.r_max <= stop <= cfg.r_max)
            else:
                self.assertEqual(h_term, h_star)
                self.assertGreaterEqual(stop, cfg.r_max)


class TestFormatAndCombined(unittest.TestCase):
    """Test the format reward and the combination."""

    def _rollout(self, trace):
        question = example()
        retriever = StaticRetriever({}, default=[doc("x")])
        return run_rollout(question, scripted_policy({"q1": trace}), retriever, RolloutConfig(budget=6))

    def test_all_successful(self):
        """Test three well-formed hops."""
        self.assertEqual(format_reward(self._rollout([search("a"), search("b"), FINISH])), 1.0)

    def test_one_failed(self):
        """Test four hops with one malformed."""
        self.assertEqual(format_reward(self._rollout([search("a"), "oops", search("b"), FINISH])), 0.5)

    def test_all_failed(self):
        """Test a rollout of only malformed hops."""
        self.assertEqual(format_reward(self._rollout(["oops"])), -1.0)

    def test_failed_initial_retrieval_counts_when_budgeted(self):
        """Test that a failed D_0 adds a -1 step only when it counts toward B."""
        question = example()
        retriever = FailingRetriever({question.question}, {}, default=[doc("x")])
        trace = [search("a"), search("b"), FINISH]
        counted = run_rollout(question, scripted_policy({"q1": trace}), retriever, RolloutConfig())
        self.assertAlmostEqual(format_reward(counted), (3 - 1) / 4)
        free = run_rollout(question, scripted_policy({"q1": trace}), retriever,
                           RolloutConfig(count_initial_in_searches=False))
        self.assertEqual(format_reward(free), 1.0)
        self.assertEqual(format_reward(run_rollout(question, scripted_policy({"q1": [FINISH]}), retriever,
                                                   RolloutConfig())), 0.0)

    def test_combined_examples(self):
        """Test the documented combinations."""
        self.assertAlmostEqual(combined_reward(1.6094, 1.0), 1.3047, places=4)
        self.assertEqual(combined_reward(0.0, 0.0), 0.0)
        self.assertAlmostEqual(combined_reward(2.3333, 1.0, CFG), 1.66665, places=5)

    def test_format_out_of_range(self):
        """Test the fmt in [-1, 1] precondition."""
        with self.assertRaises(ValueError):
            combined_reward(0.0, 1.5)


class TestScoreRollout(unittest.TestCase):
    """Test full reward breakdowns."""

    def setUp(self):
        self.question = example()
        self.retriever = StaticRetriever({self.question.question: [doc("a")], "b": [doc("b")]},
                                         default=[doc("x")])
        self.gold = frozenset({"A", "B"})

    def test_perfect_stop(self):
        """Test a rollout that stops right after completing the evidence."""
        rollout = run_rollout(self.question, scripted_policy({"q1": [search("b"), FINISH]}), self.retriever,
                              RolloutConfig())
        breakdown = score_rollout(rollout, self.gold, CFG)
        self.assertEqual(breakdown.case, RewardCase.PERFECT)
        self.assertEqual((breakdown.h_term, breakdown.h_star), (2, 2))
        self.assertAlmostEqual(breakdown.stop_reward, 2.0 + 2 / 6)
        self.assertEqual(breakdown.format_reward, 1.0)

    def test_late_stop(self):
        """Test a rollout that keeps searching after full recall."""
        trace = [search("b"), search("c"), FINISH]
        rollout = run_rollout(self.question, scripted_policy({"q1": trace}), self.retriever, RolloutConfig())
        breakdown = score_rollout(rollout, self.gold, CFG)
        self.assertEqual(breakdown.case, RewardCase.LATE)
        self.assertAlmostEqual(breakdown.stop_reward, math.log(5))

    def test_reference_h_star(self):
        """Test h* against a reference final recall that was never reached."""
        rollout = run_rollout(self.question, scripted_policy({"q1": [FINISH]}), self.retriever, RolloutConfig())
        breakdown = score_rollout(rollout, self.gold, CFG, reference_final=1.0)
        self.assertEqual(breakdown.h_star, 6)
        self.assertEqual(breakdown.case, RewardCase.EARLY)

    def test_no_search_operations(self):
        """Test scoring when neither D_0 nor any hop counted as a search."""
        config = RolloutConfig(initial_retrieval=False)
        rollout = run_rollout(self.question, scripted_policy({"q1": [FINISH]}), self.retriever, config)
        self.assertEqual(rollout.h_term, 0)
        breakdown = score_rollout(rollout, self.gold, CFG)
        self.assertEqual(breakdown.h_term, 1)
        self.assertEqual(breakdown.recall, 0.0)

    def test_reference_recalls(self):
        """Test final recall per reference rollout."""
        rollout = run_rollout(self.question, scripted_policy({"q1": [search("b"), FINISH]}), self.retriever,
                              RolloutConfig())
        self.assertEqual(reference_recalls([rollout], {"q1": self.gold}), {"q1": 1.0})

    def test_grpo_group(self):
        """Test that a group of rollouts gets zero-mean advantages."""
        traces = [[FINISH], [search("b"), FINISH], [search("b"), search("c"), FINISH]]
        rollouts = [run_rollout(self.question, scripted_policy({"q1": t}), self.retriever, RolloutConfig())
                    for t in traces]
        group = build_grpo_group(rollouts, self.gold, CFG)
        self.assertEqual(group.group_size, 3)
        self.assertAlmostEqual(sum(group.advantages), 0.0, places=9)
        self.assertEqual(max(range(3), key=lambda i: group.advantages[i]), 1)


class TestGroupAdvantages(unittest.TestCase):
    """Test group-relative advantage normalization."""

    def test_examples(self):
        """Test the documented advantage examples."""
        advantages = group_advantages([1, 2, 3])
        for value, expected in zip(advantages, (-1.2247, 0.0, 1.2247)):
            self.assertAlmostEqual(value, expected, places=4)
        self.assertEqual(group_advantages([5, 5, 5, 5]), [0.0, 0.0, 0.0, 0.0])

    def test_needs_two(self):
        """Test the group size precondition."""
        with self.assertRaises(ValueError):
            group_advantages([1.0])

    def test_random_groups(self):
        """Test zero mean and translation invariance on random groups of 8."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            rewards = rng.uniform(-3, 4, size=8)
            shift = rng.uniform(-10, 10)
            advantages = np.array(group_advantages(rewards))
            self.assertLess(abs(advantages.mean()), 1e-9)
            shifted = np.array(group_advantages(rewards + shift))
            self.assertLess(np.max(np.abs(advantages - shifted)), 1e-9)

    @given(st.lists(st.integers(-100, 100), min_size=2, max_size=16))
    def test_zero_mean_property(self, rewards):
        """Test the zero-mean property on arbitrary groups."""
        self.assertLess(abs(sum(group_advantages(rewards))), 1e-6)


class TestHistogram(unittest.TestCase):
    """Test h* frequency tables."""

    def test_histogram(self):
        """Test that every h in 1..B is listed."""
        self.assertEqual(h_star_histogram([1, 2, 2, 6], 6), [(1, 1), (2, 2), (3, 0), (4, 0), (5, 0), (6, 1)])


if __name__ == "__main__":
    unittest.main()
