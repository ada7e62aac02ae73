import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from rmap.fem import P1Space, interval_mesh, rectangle_mesh
from rmap.prior import GaussianMeasure, build_prior


@pytest.fixture(scope="module")
def prior2d():
    return build_prior(rectangle_mesh(5, 5), 0.3, alpha=2.0, s=2.0)


def test_covariance_matches_fractional_power_oracle():
    # C as an operator is alpha^-1 (M^-1 (K + M))^-s; its Euclidean form is C M^-1
    mesh = interval_mesh(12)
    sp_ = P1Space(mesh)
    M, K = sp_.mass().toarray(), sp_.stiffness().toarray()
    alpha, s = 3.0, 1.5
    prior = build_prior(mesh, 0.0, alpha, s)
    A = np.linalg.solve(M, K + M)
    op = np.real(sla.fractional_matrix_power(A, -s)) / alpha
    np.testing.assert_allclose(prior.covariance_matrix(), op @ np.linalg.inv(M), rtol=1e-8, atol=1e-12)


def test_integer_power_matches_direct_inverse(prior2d):
    sp_ = P1Space(rectangle_mesh(5, 5))
    M, K = sp_.mass().toarray(), sp_.stiffness().toarray()
    # s = 2: C^-1 (as M-weighted precision) = alpha (K + M) M^-1 (K + M)
    prec = 2.0 * (K + M) @ np.linalg.solve(M, K + M)
    np.testing.assert_allclose(prior2d.precision_matrix(), prec, rtol=1e-8, atol=1e-8)


@given(st.integers(0, 10**6))
def test_c_and_cinv_are_inverse(seed):
    prior = build_prior(rectangle_mesh(4, 3), 0.0, 1.5, 1.6)
    v = np.random.default_rng(seed).standard_normal(prior.dim)
    np.testing.assert_allclose(prior.apply_c(prior.apply_cinv(v)), v, rtol=1e-8, atol=1e-8)
    w = prior.apply_csqrt(prior.apply_csqrt(v))
    np.testing.assert_allclose(w, prior.apply_c(v), rtol=1e-10, atol=1e-12)


@given(st.integers(0, 10**6))
def test_c_is_self_adjoint_in_mass_inner_product(seed):
    prior = build_prior(rectangle_mesh(4, 3), 0.0, 1.5, 1.6)
    a, b = np.random.default_rng(seed).standard_normal((2, prior.dim))
    assert prior.inner(a, prior.apply_c(b)) == pytest.approx(prior.inner(prior.apply_c(a), b), rel=1e-10)


def test_whitened_norm(prior2d, rng):
    v = rng.standard_normal(prior2d.dim)
    assert prior2d.cinv_norm_sq(v) == pytest.approx(prior2d.inner(v, prior2d.apply_cinv(v)), rel=1e-10)
    assert prior2d.cinv_norm_sq(v) == pytest.approx(v @ prior2d.precision_matrix() @ v, rel=1e-8)


def test_sample_covariance(prior2d):
    z = np.random.default_rng(0).standard_normal((40000, prior2d.rank))
    X = np.array([prior2d.perturbation(zi) for zi in z])
    C = prior2d.covariance_matrix()
    emp = X.T @ X / len(X)
    assert np.linalg.norm(emp - C) / np.linalg.norm(C) < 0.03


def test_lumped_and_truncated():
    mesh = rectangle_mesh(4, 4)
    lumped = build_prior(mesh, 0.0, 1.0, 2.0, lumped=True)
    assert lumped.mass.nnz == lumped.dim
    trunc = build_prior(mesh, 0.0, 1.0, 2.0, truncation=5)
    assert trunc.rank == 5
    assert trunc.perturbation(np.ones(5)).shape == (25,)


def test_invalid_parameters():
    mesh = rectangle_mesh(3, 3)
    with pytest.raises(ValueError):
        build_prior(mesh, 0.0, -1.0, 2.0)
    with pytest.raises(ValueError):
        build_prior(mesh, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        GaussianMeasure(np.zeros(2), np.eye(2), np.array([1.0, 0.0]))


def test_from_covariance_roundtrip():
    C = np.array([[2.0, 0.3], [0.3, 1.0]])
    g = GaussianMeasure.from_covariance([1.0, -1.0], C)
    np.testing.assert_allclose(g.covariance_matrix(), C, atol=1e-14)
    np.testing.assert_allclose(g.precision_matrix(), np.linalg.inv(C), atol=1e-13)
