import math

import numpy as np
import pytest
from scipy import stats

from dopa.errors import DegenerateModelError, InputError
from dopa.generators import ExponentialGenerator, MarginalFamily, ParetoGenerator
from dopa.noise import build_noise_model, sample_noise, sample_noise_batch, validate_argmax_frequencies
from dopa.sampler import ArmSamplingRequest, bisection_sample


def family(k, gen=None, eta=1.0):
    return MarginalFamily.uniform(gen or ParetoGenerator(0.5), k, eta)


def test_symmetric_two_arm_thresholds():
    model = build_noise_model([0.0, 0.0], family(2))
    np.testing.assert_allclose(model.p, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(model.thresholds, -(2 - math.sqrt(2)), atol=1e-12)


def test_stationarity_and_agreement_with_bisection():
    model = build_noise_model([0.0, -1.0], family(2))
    assert model.stationarity_residual() <= 1e-10
    u = np.array([0.0, -0.3, -1.0, -4.0])
    model = build_noise_model(u, family(4))
    bis = bisection_sample(ArmSamplingRequest(u, family(4), 1e-12))
    assert np.max(np.abs(model.p - bis.p_hat)) <= 1e-10


def test_model_depends_on_u():
    a = build_noise_model([0.0, -1.0, -2.0], family(3))
    b = build_noise_model([0.0, -0.5, -2.0], family(3))
    assert not np.allclose(a.thresholds, b.thresholds)


def test_degenerate_model_rejected():
    # exponential noise with a huge gap pushes p_2 to exactly 0 in floating point
    with pytest.raises(DegenerateModelError):
        build_noise_model([0.0, -2000.0], family(2, ExponentialGenerator()))


def test_argmax_equals_component_on_every_sample():
    u = np.array([0.0, -0.3, -1.0])
    model = build_noise_model(u, family(3))
    rng = np.random.default_rng(0)
    z, comp = sample_noise_batch(model, rng, 50_000)
    np.testing.assert_array_equal(np.argmax(u + z, axis=1), comp)
    one = sample_noise(model, rng)
    assert int(np.argmax(u + one.z)) == one.component


def test_component_frequencies_symmetric():
    model = build_noise_model([0.0, 0.0], family(2))
    _, comp = sample_noise_batch(model, np.random.default_rng(3), 200_000)
    assert abs(comp.mean() - 0.5) <= 4 * math.sqrt(0.25 / 200_000)


def test_pooled_marginals_follow_family():
    u = np.array([0.0, -0.3, -1.0])
    fam = family(3)
    model = build_noise_model(u, fam)
    z, _ = sample_noise_batch(model, np.random.default_rng(9), 1_000_000)
    for k in range(3):
        ks = stats.kstest(z[:, k], lambda s: fam.cdf(s, fam.eta[k]))
        # 1% critical value of the one-sample KS statistic
        assert ks.statistic <= 1.628 / math.sqrt(z.shape[0])


def test_validate_small_symmetric():
    model = build_noise_model([0.0, 0.0], family(2))
    rep = validate_argmax_frequencies(model, 10_000, np.random.default_rng(1))
    assert np.all(np.abs(rep.frequencies - 0.5) <= 4 * math.sqrt(0.25 / 10_000))
    assert rep.passed


def test_validate_requires_enough_samples():
    model = build_noise_model([0.0, 0.0], family(2))
    with pytest.raises(InputError):
        validate_argmax_frequencies(model, 9_999, np.random.default_rng(1))


def test_validate_is_deterministic():
    model = build_noise_model([0.0, -0.3, -1.0], family(3))
    a = validate_argmax_frequencies(model, 20_000, np.random.Generator(np.random.Philox(4)))
    b = validate_argmax_frequencies(model, 20_000, np.random.Generator(np.random.Philox(4)))
    assert a.to_dict() == b.to_dict()
