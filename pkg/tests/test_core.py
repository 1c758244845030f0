"""Core types, dataset sampling, and policy values."""

import numpy as np
import pytest

from cfope import (
    CoverageViolation,
    Dataset,
    EnvSpec,
    EvaluationProblem,
    Policy,
    ips_ratio,
    policy_value_exact,
    policy_value_mc,
    sample_dataset,
)
from cfope.core import context_value


def make_env(mean, std, d0=None):
    mean = np.asarray(mean, dtype=float)
    if np.isscalar(std):
        std = np.full_like(mean, std)
    if d0 is None:
        d0 = np.full(mean.shape[0], 1.0 / mean.shape[0])
    return EnvSpec("test", d0, mean, np.asarray(std, dtype=float))


def tiled(vector, n_contexts=2):
    return Policy.uniform_over_contexts(vector, n_contexts)


TWO_CTX = make_env([[1.0, 2.0], [0.0, 0.0]], 0.5)


class TestInvariants:
    def test_d0_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sums"):
            make_env([[1.0]], 0.0, d0=[0.9])

    def test_negative_reward_std_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            make_env([[1.0, 0.0]], -0.1)

    def test_policy_rows_must_be_stochastic(self):
        with pytest.raises(ValueError):
            Policy(np.array([[0.5, 0.4]]))
        with pytest.raises(ValueError):
            Policy(np.array([[1.5, -0.5]]))

    def test_dataset_requires_finite_rewards(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0]), np.array([0]), np.array([np.inf]))

    def test_observe_must_stay_in_range(self):
        env = EnvSpec(
            "bad",
            np.array([1.0]),
            np.array([[0.0]]),
            np.array([[0.0]]),
            observe=lambda s, rng: s + 5,
        )
        with pytest.raises(ValueError, match="out-of-range"):
            env.observed_contexts(np.array([0]), np.random.default_rng(0))


class TestIpsRatio:
    def test_identical_policies_give_one(self):
        pi = tiled([0.3, 0.7])
        problem = EvaluationProblem(TWO_CTX, pi, pi)
        for s in range(2):
            for a in range(2):
                assert ips_ratio(problem, s, a) == 1.0

    def test_zero_over_zero_is_zero(self):
        problem = EvaluationProblem(TWO_CTX, tiled([1.0, 0.0]), tiled([1.0, 0.0]))
        assert ips_ratio(problem, 0, 1) == 0.0

    def test_direct_division(self):
        problem = EvaluationProblem(TWO_CTX, tiled([0.5, 0.5]), tiled([0.9, 0.1]))
        assert ips_ratio(problem, 0, 0) == pytest.approx(1.8, abs=1e-15)

    def test_uncovered_action_raises(self):
        problem = EvaluationProblem(TWO_CTX, tiled([1.0, 0.0]), tiled([0.5, 0.5]))
        assert not problem.covered
        with pytest.raises(CoverageViolation):
            ips_ratio(problem, 0, 1)

    def test_ratio_times_logging_prob_recovers_target(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            pb = rng.dirichlet(np.ones(3), size=2) + 1e-3
            pb /= pb.sum(axis=1, keepdims=True)
            pe = rng.dirichlet(np.ones(3), size=2)
            pe /= pe.sum(axis=1, keepdims=True)
            env = make_env(np.zeros((2, 3)), 0.0)
            problem = EvaluationProblem(env, Policy(pb), Policy(pe))
            for s in range(2):
                for a in range(3):
                    got = ips_ratio(problem, s, a) * pb[s, a]
                    assert got == pytest.approx(pe[s, a], abs=1e-12)


class TestSampleDataset:
    def test_zero_noise_rewards_match_means(self):
        env = make_env([[1.5, -2.0], [0.25, 3.0]], 0.0)
        problem = EvaluationProblem(env, tiled([0.5, 0.5]), tiled([0.5, 0.5]))
        data = sample_dataset(problem, 500, seed=3)
        assert np.array_equal(data.rewards, env.mean_reward[data.contexts, data.actions])

    def test_same_seed_bit_identical(self):
        problem = EvaluationProblem(TWO_CTX, tiled([0.4, 0.6]), tiled([0.5, 0.5]))
        a = sample_dataset(problem, 200, seed=11)
        b = sample_dataset(problem, 200, seed=11)
        assert np.array_equal(a.contexts, b.contexts)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
        c = sample_dataset(problem, 200, seed=12)
        assert not np.array_equal(a.rewards, c.rewards)

    def test_action_frequency_concentrates(self):
        # Binomial concentration: freq(action 1) within 3*sqrt(p(1-p)/n).
        problem = EvaluationProblem(TWO_CTX, tiled([0.5, 0.5]), tiled([0.5, 0.5]))
        data = sample_dataset(problem, 10**5, seed=7)
        freq = (data.actions == 1).mean()
        assert abs(freq - 0.5) <= 3 * np.sqrt(0.25 / 10**5)

    def test_pair_counts_consistent(self):
        problem = EvaluationProblem(TWO_CTX, tiled([0.3, 0.7]), tiled([0.5, 0.5]))
        data = sample_dataset(problem, 300, seed=5)
        counts = data.pair_counts(2, 2)
        assert counts.sum() == 300
        for s in range(2):
            for a in range(2):
                assert counts[s, a] == ((data.contexts == s) & (data.actions == a)).sum()

    def test_samples_view(self):
        problem = EvaluationProblem(TWO_CTX, tiled([0.3, 0.7]), tiled([0.5, 0.5]))
        data = sample_dataset(problem, 5, seed=2)
        rows = data.samples
        assert len(rows) == 5
        assert rows[0].reward == data.rewards[0]


class TestPolicyValue:
    def test_constant_reward(self):
        env = make_env(np.full((3, 2), 2.5), 1.0, d0=[0.2, 0.3, 0.5])
        assert policy_value_exact(env, Policy.uniform_over_contexts([0.1, 0.9], 3)) == pytest.approx(2.5)

    def test_two_context_closed_form(self):
        for p in (0.1, 0.5, 0.9):
            got = policy_value_exact(TWO_CTX, tiled([p, 1 - p]))
            assert got == pytest.approx(0.5 * (p * 1.0 + (1 - p) * 2.0), abs=1e-12)

    def test_point_mass_policy(self):
        got = policy_value_exact(TWO_CTX, tiled([0.0, 1.0]))
        assert got == pytest.approx(TWO_CTX.d0 @ TWO_CTX.mean_reward[:, 1], abs=1e-15)

    def test_mc_equals_exact_when_degenerate(self):
        env = make_env([[4.0, 4.0]], 0.0, d0=[1.0])
        pi = Policy.uniform_over_contexts([0.3, 0.7], 1)
        assert policy_value_mc(env, pi, 50, seed=0) == policy_value_exact(env, pi)

    def test_mc_three_sigma_band(self):
        # On-policy reward variance = Var[mean_reward(s,a)] + E[reward_var].
        pi = tiled([0.3, 0.7])
        probs = TWO_CTX.d0[:, None] * pi.probs
        mean = float((probs * TWO_CTX.mean_reward).sum())
        second = float((probs * (TWO_CTX.mean_reward**2 + TWO_CTX.reward_std**2)).sum())
        var = second - mean**2
        n = 40000
        got = policy_value_mc(TWO_CTX, pi, n, seed=21)
        assert abs(got - policy_value_exact(TWO_CTX, pi)) <= 3 * np.sqrt(var / n)

    def test_mc_seed_average_converges(self):
        pi = tiled([0.9, 0.1])
        exact = policy_value_exact(TWO_CTX, pi)
        draws = np.array([policy_value_mc(TWO_CTX, pi, 500, seed=s) for s in range(60)])
        assert abs(draws.mean() - exact) <= 3 * draws.std(ddof=1) / np.sqrt(60)

    def test_context_value_matches_exact(self):
        pi = tiled([0.3, 0.7])
        v = context_value(TWO_CTX, pi)
        assert float(TWO_CTX.d0 @ v) == pytest.approx(policy_value_exact(TWO_CTX, pi))
