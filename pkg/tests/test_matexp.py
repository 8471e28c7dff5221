import math

import numpy as np
import pytest
from scipy import integrate, linalg
from scipy.stats import poisson

from phreg import matexp
from phreg.errors import DimensionError, NumericDomainError

from conftest import random_subintensity


def test_scalar_exponential():
    E = matexp.matrix_exponential([[-0.1]], 10.0)
    assert E.shape == (1, 1)
    assert E[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_zero_time_is_identity(coxian3):
    np.testing.assert_array_equal(matexp.matrix_exponential(coxian3.T, 0.0), np.eye(3))


def test_triangular_matches_eigendecomposition():
    T = np.array([[-2.0, 1.0], [0.0, -3.0]])
    w, V = np.linalg.eig(T)
    oracle = (V @ np.diag(np.exp(w * 0.5)) @ np.linalg.inv(V)).real
    np.testing.assert_allclose(matexp.matrix_exponential(T, 0.5), oracle, atol=1e-12, rtol=0)


def test_random_matrices_match_scipy_expm(rng):
    for _ in range(200):
        p = int(rng.integers(1, 9))
        T = random_subintensity(rng, p)
        y = float(rng.uniform(0.0, 50.0))
        np.testing.assert_allclose(matexp.matrix_exponential(T, y), linalg.expm(T * y), atol=1e-10, rtol=0)


def test_batch_agrees_with_single_evaluations(rng):
    T = random_subintensity(rng, 4)
    ys = np.array([0.0, 0.01, 0.7, 3.0, 42.0])
    batch = matexp.expm_batch(T, ys)
    for y, E in zip(ys, batch):
        np.testing.assert_allclose(E, matexp.matrix_exponential(T, y), atol=1e-14)


def test_result_is_substochastic(rng):
    for _ in range(50):
        T = random_subintensity(rng, 5, scale=3.0)
        E = matexp.matrix_exponential(T, float(rng.uniform(0, 20)))
        assert np.all(E >= -1e-12) and np.all(E <= 1 + 1e-12)
        assert np.all(E.sum(axis=1) <= 1 + 1e-12)


def test_semigroup(rng):
    T = random_subintensity(rng, 4)
    a, b = 1.3, 2.9
    lhs = matexp.matrix_exponential(T, a + b)
    rhs = matexp.matrix_exponential(T, a) @ matexp.matrix_exponential(T, b)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_truncation_order_is_smallest_admissible():
    for mean in (0.01, 0.3, 0.99):
        for tol in (1e-8, 1e-12, 1e-15):
            M = matexp.truncation_order(mean, tol)
            assert poisson.sf(M, mean) <= tol
            assert M == 0 or poisson.sf(M - 1, mean) > tol


def test_squaring_depth_brings_mean_below_one():
    x = np.array([0.0, 0.5, 1.0, 2.0, 3.7, 1024.0, 1e5])
    depth = matexp.squaring_depth(x)
    assert np.all(x / 2.0**depth < 1.0)
    assert depth[0] == 0 and depth[1] == 0


def test_plan_fields(coxian3):
    plan = matexp.plan(coxian3.T, 10.0, 1e-12)
    assert plan.rate == 2.0
    assert np.all(plan.Q >= 0) and np.all(plan.Q.sum(axis=1) <= 1 + 1e-15)
    assert plan.rate * 10.0 / 2.0**plan.depth < 1.0


def test_van_loan_zero_time_integral_is_zero(coxian3):
    _, J = matexp.van_loan_integral(coxian3.T, coxian3.exit, coxian3.pi, 0.0)
    np.testing.assert_array_equal(J, np.zeros((3, 3)))


def test_van_loan_scalar_closed_form():
    _, J = matexp.van_loan_integral([[-1.0]], [1.0], [1.0], 2.0)
    assert J[0, 0] == pytest.approx(2.0 * math.exp(-2.0), rel=1e-12)


def test_van_loan_matches_quadrature():
    T = np.array([[-1.0, 1.0], [0.0, -2.0]])
    t = -T.sum(axis=1)
    pi = np.array([1.0, 0.0])
    y = 1.0

    def integrand(u):
        return linalg.expm(T * (y - u)) @ np.outer(t, pi) @ linalg.expm(T * u)

    oracle, _ = integrate.quad_vec(integrand, 0.0, y, epsabs=1e-12)
    E, J = matexp.van_loan_integral(T, t, pi, y)
    np.testing.assert_allclose(J, oracle, atol=1e-8)
    np.testing.assert_allclose(E, linalg.expm(T * y), atol=1e-12)


def test_augmented_diagonal_blocks_equal_expm(general2):
    A = matexp.augmented_exponential(general2.T, general2.exit, general2.pi, 1.7)
    E = matexp.matrix_exponential(general2.T, 1.7)
    np.testing.assert_allclose(A[:2, :2], E, atol=1e-13)
    np.testing.assert_allclose(A[2:, 2:], E, atol=1e-13)
    np.testing.assert_array_equal(A[2:, :2], np.zeros((2, 2)))


def test_rejects_bad_input(coxian3):
    with pytest.raises(DimensionError):
        matexp.matrix_exponential(np.zeros((0, 0)), 1.0)
    with pytest.raises(DimensionError):
        matexp.matrix_exponential(np.ones((2, 3)), 1.0)
    with pytest.raises(NumericDomainError):
        matexp.matrix_exponential([[np.nan]], 1.0)
    with pytest.raises(NumericDomainError):
        matexp.matrix_exponential([[-1.0]], -1.0)
    with pytest.raises(NumericDomainError):
        matexp.matrix_exponential([[-1.0, -0.5], [0.0, -1.0]], 1.0)
    with pytest.raises(DimensionError):
        matexp.van_loan_integral(coxian3.T, coxian3.exit[:2], coxian3.pi, 1.0)
    with pytest.raises(NumericDomainError):
        matexp.van_loan_integral(coxian3.T, coxian3.exit + 0.1, coxian3.pi, 1.0)
