import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealgmm.core_em import (Dataset, DegenerateComponentError, MixtureState, component_scales,
                               e_step, log_likelihood, m_step, m_step_means, weighted_covariance)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), labels=np.array([0, 1, 3]), q=2)
    ds = Dataset(np.zeros((3, 2)), labels=np.array([0, 1, 1]))
    assert ds.q == 2 and ds.n == 3 and ds.dim == 2


def test_e_step_single_component():
    X = np.random.default_rng(0).normal(size=(20, 3))
    p = e_step(X, np.zeros((1, 3)), [2.0])
    assert np.all(p == 1.0)


def test_e_step_symmetric_point():
    p = e_step(np.array([[0.5]]), np.array([[0.0], [1.0]]), [1.0, 1.0])
    assert np.allclose(p, 0.5)


def test_e_step_hand_value():
    # exponents 0 and -1/2
    p = e_step(np.array([[0.0]]), np.array([[0.0], [1.0]]), [1.0, 1.0])
    assert p[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-0.5)), abs=1e-12)
    assert p[0, 0] == pytest.approx(0.62246, abs=1e-5)


def test_e_step_survives_tiny_variance():
    X = np.array([[0.0], [10.0]])
    p = e_step(X, np.array([[0.0], [10.0]]), [1e-8, 1e-8])
    assert np.allclose(p, np.eye(2))


def test_e_step_rejects_bad_input():
    with pytest.raises(ValueError):
        e_step(np.zeros((2, 1)), np.zeros((1, 1)), [0.0])
    with pytest.raises(ValueError):
        e_step(np.array([[np.inf]]), np.zeros((1, 1)), [1.0])


def test_m_step_uniform_weights_give_centre_of_mass():
    X = np.random.default_rng(1).normal(size=(50, 2)) + 3.0
    means, _ = m_step(X, np.full((50, 4), 0.25))
    assert np.allclose(means, X.mean(axis=0))


def test_m_step_two_points():
    means, var = m_step(np.array([[-1.0], [1.0]]), np.ones((2, 1)))
    assert means[0, 0] == pytest.approx(0.0)
    assert var[0] == pytest.approx(1.0)


def test_m_step_one_hot_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(40, 2))
    b = rng.normal(size=(30, 2)) * 2 + 20
    X = np.vstack([a, b])
    resp = np.zeros((70, 2))
    resp[:40, 0] = 1
    resp[40:, 1] = 1
    means, var = m_step(X, resp)
    assert np.allclose(means[0], a.mean(axis=0))
    assert np.allclose(means[1], b.mean(axis=0))
    assert var[1] == pytest.approx(np.mean(np.sum((b - b.mean(axis=0)) ** 2, axis=1)) / 2)


def test_m_step_degenerate():
    resp = np.zeros((3, 2))
    resp[:, 0] = 1.0
    with pytest.raises(DegenerateComponentError) as err:
        m_step_means(np.zeros((3, 1)), resp)
    assert err.value.k == 1


def test_weighted_covariance_cases():
    assert np.allclose(weighted_covariance(np.array([[1.0, 2.0]]), [1.0], [1.0, 2.0]), 0.0)
    assert np.allclose(weighted_covariance(np.array([[-1.0], [1.0]]), [1, 1], [0.0]), [[1.0]])
    X = np.random.default_rng(3).normal(size=(200, 2)) @ np.array([[2.0, 0.3], [0.0, 0.5]])
    cov = weighted_covariance(X, np.ones(200), X.mean(axis=0))
    assert np.allclose(cov, np.cov(X.T, bias=True))


def test_weighted_covariance_zero_weight():
    with pytest.raises(DegenerateComponentError):
        weighted_covariance(np.zeros((2, 1)), [0.0, 0.0], [0.0])


def _scales_of(cov, n=100_000, seed=4):
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal(np.zeros(len(cov)), cov, size=n)
    state = MixtureState(X.mean(axis=0)[None], np.ones(1), np.ones((n, 1)))
    return component_scales(X, state)


def test_component_scales():
    s = _scales_of(np.diag([4.0, 1.0]))
    assert s.gamma_max[0] == pytest.approx(4.0, rel=0.05)
    assert s.gamma_min[0] == pytest.approx(1.0, rel=0.05)
    assert np.all(s.gamma_max >= s.gamma_min)


def test_log_likelihood_single_point():
    ll = log_likelihood(np.array([[0.0]]), np.array([[0.0]]), [1.0])
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert ll == pytest.approx(-0.91894, abs=1e-5)


def test_log_likelihood_duplicate_component():
    X = np.random.default_rng(5).normal(size=(10, 2))
    means = np.array([[0.0, 0.0], [1.0, 1.0]])
    a = log_likelihood(X, means, [1.0, 2.0])
    b = log_likelihood(X, np.vstack([means, means]), [1.0, 2.0, 1.0, 2.0])
    assert a == pytest.approx(b, abs=1e-12)


def test_log_likelihood_direct_sum():
    X = np.array([[0.3, -0.2], [1.5, 0.7]])
    means = np.array([[0.0, 0.0], [1.0, 1.0]])
    var = np.array([0.5, 2.0])
    total = 0.0
    for x in X:
        dens = [np.exp(-np.sum((x - m) ** 2) / (2 * v)) / (2 * np.pi * v) for m, v in zip(means, var)]
        total += np.log(0.5 * sum(dens))
    assert log_likelihood(X, MixtureState(means, var, e_step(X, means, var))) == pytest.approx(total)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_responsibilities_normalised(seed, K, dim):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, dim)) * 5
    p = e_step(X, rng.normal(size=(K, dim)) * 5, rng.uniform(0.01, 3, K))
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
    assert np.all((p >= 0) & (p <= 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_weighted_covariance_psd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    cov = weighted_covariance(X, rng.uniform(0, 1, 25), rng.normal(size=3))
    assert np.linalg.eigvalsh(cov)[0] >= -1e-10 * np.trace(cov)


def test_scale_equivariance():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 2))
    resp = e_step(X, rng.normal(size=(3, 2)), np.ones(3))
    s = 3.7
    m1, v1 = m_step(X, resp)
    m2, v2 = m_step(s * X, resp)
    assert np.allclose(m2, s * m1)
    assert np.allclose(v2, s * s * v1)
    state1 = MixtureState(m1, v1, resp)
    state2 = MixtureState(m2, v2, resp)
    assert np.allclose(component_scales(s * X, state2).gamma_max,
                       s * s * component_scales(X, state1).gamma_max)


def test_em_monotone_equal_variances():
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(size=(60, 2)), rng.normal(size=(60, 2)) + 4])
    means = rng.normal(size=(4, 2))
    var = np.full(4, 0.8)
    prev = -np.inf
    for _ in range(30):
        means = m_step_means(X, e_step(X, means, var))
        ll = log_likelihood(X, means, var)
        assert ll >= prev - 1e-9
        prev = ll
