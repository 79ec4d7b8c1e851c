import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dopa.errors import ConfigError, InputError
from dopa.generators import ExponentialGenerator, MarginalFamily, ParetoGenerator, corollary3_pair
from dopa.sampler import (
    ArmSamplingRequest,
    bisection_sample,
    bisection_sample_rows,
    dual_root_newton,
    exp3_closed_form,
    generic_convex_baseline,
    iteration_bound,
    iteration_limit,
    modulus_delta,
    potential_value,
)

HALF = ParetoGenerator(0.5)


def req(u, gen=HALF, eta=1.0, eps=1e-8, **kw):
    u = np.asarray(u, dtype=float)
    return ArmSamplingRequest(u, MarginalFamily.uniform(gen, u.size, eta), eps, **kw)


def test_symmetric_input_gives_uniform():
    for fn in (bisection_sample, dual_root_newton, generic_convex_baseline):
        res = fn(req([0, 0, 0, 0]))
        np.testing.assert_allclose(res.p_hat, 0.25, atol=1e-12)
    assert bisection_sample(req([0, 0, 0, 0])).iterations == 0


def test_two_arms_against_newton():
    r = req([0.0, -1.0])
    assert np.max(np.abs(bisection_sample(r).p_hat - dual_root_newton(r).p_hat)) <= 1e-8


def test_iteration_bound_example():
    u = np.random.default_rng(3).uniform(-100, 0, 16)
    r = req(u)
    bound = iteration_bound(r.family, u, 1e-8)
    assert iteration_limit(bound) <= 38
    assert bisection_sample(r).iterations <= iteration_limit(bound)


def test_modulus_delta():
    fam = MarginalFamily.uniform(HALF, 4, 1.0)
    assert modulus_delta(fam, 1e-8) == pytest.approx(1.25e-9)
    assert modulus_delta(fam, 2e-8) == pytest.approx(2.5e-9)
    assert modulus_delta(MarginalFamily.uniform(HALF, 4, 10.0), 1e-8) == pytest.approx(1.25e-8)
    with pytest.raises(ConfigError):
        modulus_delta(MarginalFamily.uniform(corollary3_pair(), 4, 1.0), 1e-8)
    assert modulus_delta(MarginalFamily.uniform(corollary3_pair(), 4, 1.0), 1e-8, override=1e-10) == 1e-10


def test_exp3_closed_form():
    np.testing.assert_allclose(exp3_closed_form([0.0, math.log(2)], 1.0), [1 / 3, 2 / 3], atol=1e-15)
    np.testing.assert_allclose(exp3_closed_form([-4.0] * 5, 0.3), 0.2, atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(2, 30))
        eta = float(rng.choice([0.5, 1.0, 10.0]))
        u = rng.uniform(-50, 0, k)
        r = req(u, ExponentialGenerator(), eta)
        closed = exp3_closed_form(u, eta)
        assert np.max(np.abs(dual_root_newton(r).p_hat - closed)) <= 1e-12
        assert np.linalg.norm(bisection_sample(r).p_hat - closed) <= 1e-8


def test_potential_value():
    r = req([0, 0, 0, 0])
    assert potential_value(r, np.full(4, 0.25)) == pytest.approx(2.0)
    rng = np.random.default_rng(2)
    u = rng.uniform(-5, 0, 6)
    r = req(u)
    p = dual_root_newton(r).p_hat
    assert potential_value(r, p) >= potential_value(r, np.full(6, 1 / 6))
    shifted = req(u + 3.0)
    assert potential_value(shifted, p) == pytest.approx(potential_value(r, p) + 3.0, abs=1e-12)
    with pytest.raises(InputError):
        potential_value(r, np.full(6, 0.5))


def test_baseline_agrees_on_k64():
    rng = np.random.default_rng(11)
    for _ in range(100):
        r = req(rng.uniform(-100, 0, 64))
        assert np.max(np.abs(bisection_sample(r).p_hat - generic_convex_baseline(r).p_hat)) <= 1e-5


def test_single_arm():
    for fn in (bisection_sample, dual_root_newton, generic_convex_baseline):
        np.testing.assert_array_equal(fn(req([-3.0])).p_hat, [1.0])


def test_request_validation():
    with pytest.raises(InputError):
        req([0.0, math.nan])
    with pytest.raises(InputError):
        ArmSamplingRequest(np.zeros(3), MarginalFamily.uniform(HALF, 2), 1e-8)
    with pytest.raises(ConfigError):
        req([0.0, 1.0], eps=0.0)


def test_hybrid_with_override():
    u = np.array([0.0, -0.5, -2.0])
    r = req(u, corollary3_pair(), delta_override=1e-12)
    assert np.max(np.abs(bisection_sample(r).p_hat - dual_root_newton(r).p_hat)) <= 1e-8


def test_rows_match_single_calls():
    rng = np.random.default_rng(4)
    u = rng.uniform(-30, 0, (7, 5))
    u[3] = 0.0  # a zero-iteration row among the others
    fam = MarginalFamily.uniform(HALF, 5, 2.0)
    delta = np.full(7, modulus_delta(fam, 1e-8))
    p, lo, n = bisection_sample_rows(u, HALF, 2.0, delta)
    for i in range(7):
        single = bisection_sample(ArmSamplingRequest(u[i], fam, 1e-8))
        np.testing.assert_array_equal(p[i], single.p_hat)
        assert n[i] == single.iterations
    assert n[3] == 0


def test_numpy_path_matches_newton_for_hybrid_rows():
    rng = np.random.default_rng(8)
    u = rng.uniform(-3, 0, (4, 3))
    p, _, n = bisection_sample_rows(u, corollary3_pair(), 1.0, np.full(4, 1e-12))
    for i in range(4):
        ref = dual_root_newton(req(u[i], corollary3_pair(), delta_override=1e-12)).p_hat
        assert np.max(np.abs(p[i] - ref)) <= 1e-9


u_vectors = arrays(np.float64, st.integers(2, 12), elements=st.floats(-50, 0))


@settings(max_examples=150, deadline=None)
@given(u_vectors, st.sampled_from([0.25, 0.5, 0.75]), st.sampled_from([0.5, 1.0, 10.0]))
def test_bisection_properties(u, alpha, eta):
    gen = ParetoGenerator(alpha)
    r = req(u, gen, eta)
    res = bisection_sample(r)
    p = res.p_hat
    # simplex, positivity, accuracy, iteration bound
    assert np.all(p > 0) and abs(p.sum() - 1.0) <= 1e-12
    assert np.linalg.norm(p - dual_root_newton(r).p_hat) <= 1e-8
    bound = iteration_bound(r.family, u, 1e-8)
    assert res.iterations <= iteration_limit(bound)
    # translation invariance
    assert np.max(np.abs(bisection_sample(req(u + 7.5, gen, eta)).p_hat - p)) <= 2e-8
    # scale coupling: p(lambda u; eta) = p(u; eta / lambda)
    assert np.max(np.abs(bisection_sample(req(2.0 * u, gen, eta)).p_hat - bisection_sample(req(u, gen, eta / 2)).p_hat)) <= 2e-8
    # lowering one coordinate does not raise its probability
    lowered = u.copy()
    lowered[0] -= 1.0
    assert bisection_sample(req(lowered, gen, eta)).p_hat[0] <= p[0] + 2e-8
    raised = u.copy()
    raised[0] += 1.0
    assert dual_root_newton(req(raised, gen, eta)).p_hat[0] >= dual_root_newton(r).p_hat[0] - 1e-15


def test_hybrid_records_f_at_one():
    fam = MarginalFamily.uniform(corollary3_pair(), 3, 1.0)
    res = bisection_sample(ArmSamplingRequest(np.array([0.0, -1.0, -2.0]), fam, 1e-8, delta_override=1e-9))
    assert res.diagnostics["f_at_one"] == -1.0
