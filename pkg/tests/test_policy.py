import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathmv.marketdata import ModelParams
from pathmv.policy import (
    GaussianPolicy,
    PolicyError,
    bootstrap_policy,
    entropy_cost,
    exploratory_coeffs,
    hamiltonian_integrand,
    optimal_policy,
    optimal_policy_batch,
    sample,
)


def random_params(g, d):
    L = np.tril(g.normal(size=(d, d)), -1) * 0.1 + np.diag(g.uniform(0.1, 0.4, d))
    return ModelParams.from_cov(g.normal(0.1, 0.1, d), L @ L.T, r=0.01)


def test_optimal_policy_scalar_example():
    pol = optimal_policy(ModelParams.constant(0.5, 1.0), dx=-2.0, dxx=2.0, gamma=0.01)
    assert pol.mean[0] == pytest.approx(0.5, rel=1e-14)
    assert pol.cov[0, 0] == pytest.approx(0.005, rel=1e-14)


def test_zero_dx_gives_zero_mean():
    pol = optimal_policy(random_params(np.random.default_rng(0), 3), 0.0, 1.5, 0.01)
    np.testing.assert_array_equal(pol.mean, 0.0)


def test_no_excess_return_gives_zero_mean():
    p = ModelParams.from_cov([0.03, 0.03], [[0.04, 0.0], [0.0, 0.09]], r=0.03)
    pol = optimal_policy(p, -7.0, 0.5, 0.01)
    np.testing.assert_array_equal(pol.mean, 0.0)


def test_floor_keeps_covariance_valid():
    pol = optimal_policy(ModelParams.constant(0.1, 0.2), 1.0, -3.0, 0.01, floor=1e-6)
    assert pol.cov[0, 0] == pytest.approx(0.01 / 0.04 / 1e-6)
    np.testing.assert_allclose(pol.chol @ pol.chol.T, pol.cov, rtol=1e-10)


def test_batch_matches_scalar():
    p = random_params(np.random.default_rng(1), 3)
    dx, dxx = np.array([-1.0, 0.3, 2.0]), np.array([0.5, 2.0, -1.0])
    batch = optimal_policy_batch(p, dx, dxx, 0.02)
    for i in range(3):
        single = optimal_policy(p, dx[i], dxx[i], 0.02)
        np.testing.assert_allclose(batch.mean[i], single.mean, rtol=1e-12)
        np.testing.assert_allclose(batch.cov[i], single.cov, rtol=1e-12)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_mean_invariant_and_cov_linear_in_gamma(g1, g2):
    p = ModelParams.from_cov([0.1, 0.2], [[0.04, 0.01], [0.01, 0.09]])
    a, b = optimal_policy(p, -1.0, 2.0, g1), optimal_policy(p, -1.0, 2.0, g2)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-14)
    np.testing.assert_allclose(a.cov / g1, b.cov / g2, rtol=1e-12)


def test_singular_covariance_rejected():
    p = ModelParams(np.array([0.1, 0.1]), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(PolicyError):
        optimal_policy(p, -1.0, 1.0, 0.01)


def test_sample_moments():
    pol = GaussianPolicy.from_moments([0.3, -0.2], [[0.5, 0.2], [0.2, 0.3]])
    n = 100_000
    a = sample(pol, np.random.default_rng(2), size=n)
    np.testing.assert_allclose(a.mean(axis=0), pol.mean, atol=3 * math.sqrt(0.5 / n))
    emp = np.cov(a.T)
    c = pol.cov
    # standard error of each covariance entry for Gaussian data
    se = np.sqrt((c * c + np.outer(np.diag(c), np.diag(c))) / (n - 1))
    assert np.all(np.abs(emp - c) < 3 * se)


def test_sample_deterministic_and_degenerate_limit():
    p = ModelParams.constant(0.1, 0.2)
    pol = optimal_policy(p, -1.0, 1.0, 1e-16)
    assert sample(pol, 3)[0] == pytest.approx(pol.mean[0], abs=1e-6)
    np.testing.assert_array_equal(sample(pol, 5, size=4), sample(pol, 5, size=4))


def test_entropy_examples():
    v = 1.0 / (2 * math.pi * math.e)
    assert entropy_cost(GaussianPolicy.from_moments([0.0], [[v]])) == pytest.approx(0.0, abs=1e-14)
    eye = GaussianPolicy.from_moments([0.0, 0.0], np.eye(2))
    assert entropy_cost(eye) == pytest.approx(-math.log(2 * math.pi * math.e), rel=1e-14)
    one = entropy_cost(GaussianPolicy.from_moments([0.0], [[0.3]]))
    four = entropy_cost(GaussianPolicy.from_moments([0.0], [[1.2]]))
    assert one - four == pytest.approx(math.log(2.0), rel=1e-13)


def test_exploratory_coeffs_zero_mean():
    p = random_params(np.random.default_rng(3), 3)
    pol = GaussianPolicy.from_moments(np.zeros(3), np.diag([0.1, 0.2, 0.3]))
    drift, vol_sq = exploratory_coeffs(pol, p)
    assert drift == 0.0
    assert vol_sq == pytest.approx(np.trace(p.Sigma.T @ pol.cov), rel=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_exploratory_coeffs_match_direct_arithmetic(seed):
    g = np.random.default_rng(seed)
    d = 3
    p = random_params(g, d)
    B = g.normal(size=(d, d))
    pol = GaussianPolicy.from_moments(g.normal(size=d), B @ B.T + 0.1 * np.eye(d))
    drift, vol_sq = exploratory_coeffs(pol, p)
    m, C, S = pol.mean, pol.cov, p.Sigma
    assert drift == pytest.approx(sum((p.mu[i] - p.r) * m[i] for i in range(d)), rel=1e-12, abs=1e-14)
    quad = sum(m[i] * S[i, j] * m[j] for i in range(d) for j in range(d))
    tr = sum(S[j, i] * C[j, i] for i in range(d) for j in range(d))
    assert vol_sq == pytest.approx(quad + tr, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 10.0))
def test_optimal_trace_term(seed, dxx):
    g = np.random.default_rng(seed)
    p = random_params(g, 4)
    pol = optimal_policy(p, g.normal(), dxx, 0.01)
    assert np.trace(p.Sigma.T @ pol.cov) == pytest.approx(0.01 * 4 / dxx, rel=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_hamiltonian_plus_entropy_constant(seed):
    g = np.random.default_rng(seed)
    p = random_params(g, 3)
    gamma, dx, dxx = 0.01, g.normal(), g.uniform(0.1, 5.0)
    pol = optimal_policy(p, dx, dxx, gamma)
    a = pol.mean + g.normal(size=(100, 3)) * 0.5
    L = hamiltonian_integrand(a, p, dx, dxx) + gamma * pol.log_density(a)
    assert np.std(L) < 1e-6 * max(1.0, abs(np.mean(L)))


def test_bootstrap_policy():
    p = ModelParams.from_cov([0.1, 0.2], [[0.04, 0.01], [0.01, 0.09]])
    pol = bootstrap_policy(p, 0.01)
    np.testing.assert_array_equal(pol.mean, 0.0)
    np.testing.assert_allclose(pol.cov, 0.01 * np.linalg.inv(p.Sigma), rtol=1e-12)


def test_non_pd_covariance_rejected():
    with pytest.raises(PolicyError):
        GaussianPolicy.from_moments([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_json_roundtrip():
    pol = GaussianPolicy.from_moments([0.25, -1.5], [[0.3, 0.1], [0.1, 0.2]])
    back = GaussianPolicy.from_json(pol.to_json())
    np.testing.assert_array_equal(back.mean, pol.mean)
    np.testing.assert_array_equal(back.cov, pol.cov)
