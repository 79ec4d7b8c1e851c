import math

import numpy as np
import pytest
from scipy import stats

from dopa.bandit import (
    LearnerState,
    Schedule,
    corollary3_policy,
    estimate_reward,
    make_policy,
    next_distribution,
    next_distributions,
    run_batch,
    run_batch_traces,
    run_episode,
    sample_arm,
    tuned_eta,
)
from dopa.environments import FTLKillerEnv, ScriptedAdversary, StochasticEnv
from dopa.errors import ConfigError, InvariantViolation
from dopa.generators import ParetoGenerator


def stochastic(means):
    return lambda rng: StochasticEnv(means, rng)


@pytest.mark.parametrize("kind", ["dopa_static", "dopa_anytime", "ftrl_baseline", "exp3", "ftpl_optimistic"])
def test_uniform_at_start(kind):
    p = next_distribution(make_policy(kind), LearnerState.initial(5))
    np.testing.assert_allclose(p, 0.2, atol=1e-9)


def test_ftl_indicator_and_ties():
    pol = make_policy("ftl")
    np.testing.assert_array_equal(next_distribution(pol, LearnerState(np.array([-3.0, -1.0, -2.0]))), [0, 1, 0])
    np.testing.assert_array_equal(next_distribution(pol, LearnerState(np.array([-1.0, -1.0]))), [1, 0])


def test_anytime_equals_static_at_matching_rate():
    u = np.array([-3.0, -1.0, -7.5, -2.0])
    anytime = next_distribution(make_policy("dopa_anytime"), LearnerState(u, 4))
    static = next_distribution(make_policy("dopa_static", schedule=4.0), LearnerState(u, 4))
    np.testing.assert_array_equal(anytime, static)


def test_schedule_parsing():
    assert Schedule.parse("sqrt(2)").eta(9) == 6.0
    assert Schedule.parse("constant(1.5)").eta(100) == 1.5
    assert Schedule.parse(3).eta(1) == 3.0
    with pytest.raises(ConfigError):
        Schedule.parse("cubic(2)")


def test_tuned_eta():
    assert tuned_eta(0.5, 8, 10_000) == pytest.approx(math.sqrt(5000))
    assert tuned_eta(0.25, 4, 100) == pytest.approx(math.sqrt(100 * 0.75 / 0.5) * 4 ** -0.25)


def test_estimate_reward():
    assert estimate_reward(1, -0.5, 0.25).value == -2.0
    assert estimate_reward(0, 0.0, 0.01).value == 0.0
    with pytest.raises(InvariantViolation):
        estimate_reward(0, -1.0, 0.0)


def test_estimator_is_unbiased():
    rng = np.random.default_rng(0)
    p, r = np.array([0.3, 0.7]), np.array([-0.2, -0.9])
    n = 1_000_000
    arms = (rng.random(n) >= p[0]).astype(int)
    est = np.zeros((n, 2))
    est[np.arange(n), arms] = r[arms] / p[arms]
    sigma = np.sqrt(r**2 / p - r**2) / math.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - r) <= 4 * sigma)


def test_sample_arm_inverse_cdf():
    p = np.array([0.2, 0.0, 0.5, 0.3])
    assert sample_arm(p, 0.0) == 0
    assert sample_arm(p, 0.2) == 2
    assert sample_arm(p, 0.6999) == 2
    assert sample_arm(p, 0.9999999) == 3


def test_single_round_update():
    tr = run_episode(make_policy("dopa_anytime"), stochastic([0.0, -0.5, -0.5]), 1, 3)
    expected = np.zeros(3)
    expected[tr.arms[0]] = tr.rewards[0] / tr.probabilities[0]
    np.testing.assert_array_equal(tr.u_hat, expected)


def test_ftl_killer_regret():
    tr = run_episode(make_policy("ftl"), lambda rng: FTLKillerEnv(), 100, 0)
    assert tr.final_regret >= 49
    assert tr.arms[0::2].tolist() == [0] * 50 and tr.arms[1::2].tolist() == [1] * 50


def test_replay_is_bit_identical():
    pol = make_policy("dopa_anytime")
    a = run_episode(pol, stochastic([0.0, -0.2, -0.4]), 500, 42).to_csv()
    b = run_episode(pol, stochastic([0.0, -0.2, -0.4]), 500, 42).to_csv()
    assert a == b
    assert run_episode(pol, stochastic([0.0, -0.2, -0.4]), 500, 43).to_csv() != a


@pytest.mark.parametrize("kind", ["dopa_anytime", "exp3"])
def test_batch_matches_single_episodes(kind):
    pol = make_policy(kind)
    traces, _ = run_batch_traces(pol, stochastic([0.0, -0.3, -0.3, -0.6]), 400, [1, 2, 3])
    for tr in traces:
        single = run_episode(pol, stochastic([0.0, -0.3, -0.3, -0.6]), 400, tr.seed)
        assert single.to_csv() == tr.to_csv()


def test_one_seed_aggregate_equals_trace():
    agg, traces = run_batch(make_policy("dopa_anytime"), stochastic([0.0, -0.2]), 200, [9])
    np.testing.assert_array_equal(agg.mean, traces[0].cum_regret)
    assert np.all(agg.stderr == 0)


def test_mean_regret_monotone_and_u_hat_nonincreasing():
    agg, traces = run_batch(make_policy("dopa_anytime"), stochastic([0.0, -0.2, -0.2, -0.5]), 2000, range(1, 21))
    assert np.all(np.diff(agg.mean) >= -1e-12)
    assert np.all(agg.min <= agg.mean) and np.all(agg.mean <= agg.max)
    for tr in traces:
        assert np.all(tr.u_hat <= 0)
        assert np.all((tr.probabilities > 0) & (tr.probabilities <= 1))
        assert np.all((tr.rewards >= -1) & (tr.rewards <= 0))


def test_u_hat_nonincreasing_per_round():
    pol = make_policy("dopa_anytime")
    state = LearnerState.initial(3)
    rng = np.random.default_rng(0)
    for t in range(1, 300):
        state.t = t
        p = next_distribution(pol, state)
        arm = sample_arm(p, rng.random())
        before = state.u_hat.copy()
        state.u_hat[arm] += estimate_reward(arm, -rng.random(), p[arm]).value
        assert np.all(state.u_hat <= before)


def test_failing_round_is_reported():
    def script(t, history):
        return np.array([0.0, 2.0]) if t == 5 else np.zeros(2)

    pol = make_policy("dopa_anytime")
    traces, failures = run_batch_traces(pol, lambda rng: ScriptedAdversary(script, 2), 10, [1, 2])
    assert not traces and [f.round for f in failures] == [5, 5]
    with pytest.raises(InvariantViolation, match="round 5"):
        run_episode(pol, lambda rng: ScriptedAdversary(script, 2), 10, 1)


def test_hybrid_policy_runs():
    pol = corollary3_policy()
    assert pol.lipschitz is not None and pol.lipschitz > 0
    agg, _ = run_batch(pol, stochastic([0.0, -0.3, -0.3]), 100, [1, 2])
    assert agg.final_mean < 100


def test_policy_validation():
    with pytest.raises(ConfigError):
        make_policy("bogus")
    with pytest.raises(ConfigError):
        make_policy("ftrl_baseline", "exp3")


@pytest.mark.slow
def test_ftpl_matches_dopa_regret():
    means = [0.0, -0.2, -0.2, -0.4]
    seeds = range(1, 21)
    agg_d, tr_d = run_batch(make_policy("dopa_anytime"), stochastic(means), 10_000, seeds)
    agg_f, tr_f = run_batch(make_policy("ftpl_optimistic", schedule="sqrt(2)"), stochastic(means), 10_000, seeds)
    a = [t.final_regret for t in tr_d]
    b = [t.final_regret for t in tr_f]
    assert stats.ttest_ind(a, b, equal_var=False).pvalue > 0.01
    lo_d, hi_d = agg_d.final_mean - 2 * agg_d.stderr[-1], agg_d.final_mean + 2 * agg_d.stderr[-1]
    lo_f, hi_f = agg_f.final_mean - 2 * agg_f.stderr[-1], agg_f.final_mean + 2 * agg_f.stderr[-1]
    assert lo_d <= hi_f and lo_f <= hi_d
