import numpy as np
import pytest

from rmap.problem import Randomization, linear_posterior
from rmap.warmstart import WarmStartContext, map_point, random_guess, sensitivity_guess


def _exact(problem, B, r):
    # randomized MAP point of a linear problem in closed form
    _, cov = linear_posterior(problem, B)
    Cinv = np.linalg.inv(problem.prior.covariance_matrix())
    s2 = problem.noise_sigma**2
    return cov @ (B.T @ (problem.observations + r.theta) / s2 + Cinv @ (problem.prior.mean + r.eps))


def _randomizations(problem, n, seed=0):
    z = np.random.default_rng(seed).standard_normal((n, problem.randomization_width))
    return [problem.randomization_from_normals(zi, index=i) for i, zi in enumerate(z)]


def test_guess_is_exact_for_linear_problems(linear_problem):
    p, B = linear_problem
    ctx = WarmStartContext(p, cg_tol=1e-12)
    r1, r2 = _randomizations(p, 2)
    g1, fb = sensitivity_guess(ctx, r1)
    assert not fb
    np.testing.assert_allclose(g1, _exact(p, B, r1), atol=1e-8)
    # chained from the previous solution
    g2, _ = sensitivity_guess(ctx, r2, r1, g1)
    np.testing.assert_allclose(g2, _exact(p, B, r2), atol=1e-8)


def test_full_rank_surrogate_is_exact(linear_problem):
    p, B = linear_problem
    ctx = WarmStartContext(p, rank=p.n_params)
    (r,) = _randomizations(p, 1, seed=4)
    np.testing.assert_allclose(sensitivity_guess(ctx, r)[0], _exact(p, B, r), atol=1e-8)


def test_surrogate_rank_bounds(linear_problem):
    p, _ = linear_problem
    with pytest.raises(ValueError):
        WarmStartContext(p, rank=0)


def test_fallback_when_cg_fails(linear_problem):
    p, _ = linear_problem
    ctx = WarmStartContext(p, cg_tol=1e-14, cg_max_iters=1)
    (r,) = _randomizations(p, 1)
    guess, fb = sensitivity_guess(ctx, r)
    assert fb
    np.testing.assert_allclose(guess, p.prior.mean + r.eps)


def test_zero_change_returns_previous(linear_problem):
    p, _ = linear_problem
    ctx = WarmStartContext(p)
    r = Randomization(np.zeros(p.n_obs), np.zeros(p.n_params))
    guess, fb = sensitivity_guess(ctx, r)
    np.testing.assert_array_equal(guess, ctx.anchor)
    assert not fb


def test_map_point_and_random_guess(linear_problem):
    p, B = linear_problem
    u, rep = map_point(p)
    np.testing.assert_allclose(u, linear_posterior(p, B)[0], atol=1e-8)
    eps = np.ones(p.n_params)
    np.testing.assert_allclose(random_guess(p.prior, eps=eps), p.prior.mean + 1)


def test_warm_guess_close_on_helmholtz(helmholtz8):
    p = helmholtz8.problem.clone()
    ctx = WarmStartContext(p)
    (r,) = _randomizations(p, 1, seed=2)
    guess, _ = sensitivity_guess(ctx, r)
    from rmap.optimizer import MAPObjective, trincg_minimize

    u, _ = trincg_minimize(MAPObjective(p, r), guess)
    cold = p.prior.mean + r.eps
    # the first-order guess is much closer to the minimizer than u0 + eps
    assert p.norm(guess - u) < 0.5 * p.norm(cold - u)
