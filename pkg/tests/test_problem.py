import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmap.analytical import J1, J2
from rmap.errors import SolverFailure
from rmap.prior import GaussianMeasure
from rmap.problem import (
    ExplicitModel,
    InverseProblem,
    Randomization,
    SolveCounter,
    linear_model,
    linear_posterior,
    make_linear_problem,
    power_model,
)


def test_counter_accounting(helmholtz8):
    p = helmholtz8.problem.clone()
    u = helmholtz8.truth
    v = np.ones(p.n_params)
    p.objective(u)
    assert p.counter.as_dict() == {"forward": 1, "adjoint": 0, "incremental_forward": 0, "incremental_adjoint": 0}
    p.gradient(u)
    assert (p.counter.forward, p.counter.adjoint) == (1, 1)
    p.gradient(u)
    assert p.counter.adjoint == 1  # adjoint cached for the same data
    p.hessian_action(u, v)
    assert (p.counter.incremental_forward, p.counter.incremental_adjoint) == (1, 1)
    p.gn_hessian_action(u, v)
    assert (p.counter.incremental_forward, p.counter.incremental_adjoint) == (2, 2)
    assert p.counter.total == 6


def test_cache_holds_two_points(helmholtz8):
    p = helmholtz8.problem.clone()
    u1, u2, u3 = helmholtz8.truth, helmholtz8.truth + 0.01, helmholtz8.truth - 0.01
    p.objective(u1)
    p.objective(u2)
    p.objective(u1)
    assert p.counter.forward == 2
    p.objective(u3)  # evicts u2 (least recently used)
    p.objective(u1)
    assert p.counter.forward == 3
    p.objective(u2)
    assert p.counter.forward == 4


def test_randomized_gradient_uses_new_adjoint(helmholtz8):
    p = helmholtz8.problem.clone()
    u = helmholtz8.truth
    r = p.randomization_from_normals(np.random.default_rng(0).standard_normal(p.randomization_width))
    p.gradient(u)
    p.gradient(u, r)
    assert p.counter.adjoint == 2


@given(st.floats(-2, 2), st.floats(-0.5, 0.5), st.floats(-2, 2))
def test_scalar_gradient_fd(u, theta, eps):
    p = J2.problem()
    r = Randomization(np.array([theta]), np.array([eps]))
    x = np.array([u])
    h = 1e-6
    fd = (p.randomized_objective(x + h, r) - p.randomized_objective(x - h, r)) / (2 * h)
    assert p.gradient(x, r)[0] == pytest.approx(fd, rel=1e-6, abs=1e-6)
    # analytic cross-check against the closed-form scalar objective
    assert p.randomized_objective(x, r) == pytest.approx(J2.cost(u, theta, eps), rel=1e-12)


def test_randomization_layout():
    p = J1.problem()
    z = np.array([0.7, -1.2])
    r = p.randomization_from_normals(z, index=4)
    assert r.theta[0] == pytest.approx(p.noise_sigma * 0.7)
    assert r.eps[0] == pytest.approx(-1.2 * np.sqrt(J1.prior_var))
    assert r.index == 4
    assert p.randomization_width == 2


def test_randomized_offset_for_fixed_perturbation():
    # J^r - J at fixed (theta, eps) is linear plus quadratic in the perturbation
    p = J1.problem()
    u = np.array([0.3])
    r = Randomization(np.array([0.1]), np.array([0.2]))
    diff = p.randomized_objective(u, r) - p.objective(u)
    res = J1.data - u[0] ** 2
    expect = (0.1 * res + 0.005) / p.noise_sigma**2 + (-0.2 * (u[0] - J1.prior_mean) + 0.02) / J1.prior_var
    assert diff == pytest.approx(expect, rel=1e-12)


def test_riesz_gradient_pairs_with_mass(helmholtz8, rng):
    p = helmholtz8.problem.clone()
    u = helmholtz8.truth
    v = rng.standard_normal(p.n_params)
    assert p.inner(p.gradient(u), v) == pytest.approx(p.euclidean_gradient(u) @ v, rel=1e-10)


def test_dense_jacobian_rows_and_columns(helmholtz8, linear_problem, rng):
    p = helmholtz8.problem  # fewer observations than parameters: rows by adjoint solves
    u = helmholtz8.truth
    J = p.jacobian(u)
    v = rng.standard_normal(p.n_params)
    np.testing.assert_allclose(J @ v, p.model.jacobian_action(p.state(u), v), rtol=1e-10, atol=1e-12)
    B = np.random.default_rng(3).standard_normal((5, 3))  # more observations: columns
    lp = InverseProblem(linear_model(B), GaussianMeasure.from_covariance(np.zeros(3), np.eye(3)), np.zeros(5), 1.0)
    np.testing.assert_allclose(lp.jacobian(np.ones(3)), B, atol=1e-15)
    assert lp.counter.incremental_forward == 3


def test_dense_gn_hessian_linear(linear_problem):
    p, B = linear_problem
    H = p.dense_gn_hessian(np.zeros(p.n_params))
    np.testing.assert_allclose(H, B.T @ B / p.noise_sigma**2 + np.linalg.inv(p.prior.covariance_matrix()), rtol=1e-10)


def test_linear_posterior_matches_normal_equations(linear_problem):
    p, B = linear_problem
    mean, cov = linear_posterior(p, B)
    C = p.prior.covariance_matrix()
    # covariance form of the Gaussian update
    S = B @ C @ B.T + p.noise_sigma**2 * np.eye(p.n_obs)
    Kg = C @ B.T @ np.linalg.inv(S)
    np.testing.assert_allclose(mean, p.prior.mean + Kg @ (p.observations - B @ p.prior.mean), atol=1e-12)
    np.testing.assert_allclose(cov, C - Kg @ B @ C, atol=1e-12)


def test_clone_and_pickle(helmholtz8):
    p = helmholtz8.problem.clone()
    p.objective(helmholtz8.truth)
    c = p.clone()
    assert c.counter.total == 0 and p.counter.total == 1
    q = pickle.loads(pickle.dumps(p))
    assert q.objective(helmholtz8.truth) == p.objective(helmholtz8.truth)
    assert q.counter.forward == 2  # cache dropped on pickling


def test_explicit_model_flags_nonfinite():
    m = ExplicitModel(lambda u: np.array([np.log(u[0])]), lambda u: np.array([[1 / u[0]]]), n_params=1, n_obs=1)
    p = InverseProblem(m, GaussianMeasure.from_covariance([1.0], [[1.0]]), [0.0], 1.0)
    with np.errstate(invalid="ignore"):
        with pytest.raises(SolverFailure):
            p.objective(np.array([-1.0]))


def test_power_model_second_order():
    m = power_model(3)
    st_ = m.solve_state(np.array([0.7]))
    assert m.second_order_action(st_, np.array([2.0]), np.array([1.5]))[0] == pytest.approx(2.0 * 6 * 0.7 * 1.5)


def test_counter_arithmetic():
    a = SolveCounter(1, 2, 3, 4)
    b = SolveCounter(1, 1, 1, 1)
    assert (a - b).as_dict() == {"forward": 0, "adjoint": 1, "incremental_forward": 2, "incremental_adjoint": 3}
    assert (a + b).total == 14


def test_invalid_noise():
    with pytest.raises(ValueError):
        make_linear_problem(noise_sigma=0.0)
