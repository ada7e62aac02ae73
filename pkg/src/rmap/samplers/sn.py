"""Stochastic Newton MCMC with a Gauss-Newton Hessian.

From the current state ``u`` the proposal is Gaussian with mean
``u - P(u)^-1 grad J(u)`` and covariance ``P(u)^-1``, where
``P = dG^T Lambda^-1 dG + M C^-1`` is the Euclidean Gauss-Newton Hessian.
Because ``P`` depends on the state, the Metropolis-Hastings ratio includes
the reverse proposal density evaluated at the proposal's own linearization.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from rmap.rng import STREAM_MCMC, generator
from rmap.samplers.chain import Chain


@dataclass
class _Linearization:
    u: np.ndarray
    cost: float
    mean: np.ndarray
    chol: np.ndarray
    logdet: float


def linearize(problem, u):
    """Cost, Newton mean and Cholesky factor of the GN Hessian at ``u``."""
    u = np.asarray(u, dtype=float)
    cost = problem.objective(u)
    g = problem.euclidean_gradient(u)
    P = problem.dense_gn_hessian(u)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gauss-Newton Hessian factorization failed") from exc
    step = sla.cho_solve((L, True), g)
    return _Linearization(u, cost, u - step, L, 2.0 * float(np.sum(np.log(np.diag(L)))))


def log_proposal(lin, v):
    """``log q(v | lin.u)`` up to the constant shared by all states."""
    r = lin.chol.T @ (np.asarray(v) - lin.mean)
    return 0.5 * lin.logdet - 0.5 * float(r @ r)


def log_acceptance(cur, prop):
    """Log MH ratio for moving from linearization ``cur`` to ``prop``."""
    return (-prop.cost + log_proposal(prop, cur.u)) - (-cur.cost + log_proposal(cur, prop.u))


def sn_chain(problem, n, start, seed=0, basin=None):
    """Stochastic Newton chain of length ``n`` starting at ``start``."""
    rng = generator(seed, STREAM_MCMC)
    c0 = problem.counter.snapshot()
    cur = linearize(problem, start)
    N = problem.n_params
    samples = np.empty((n, N))
    accepted = np.zeros(n, dtype=bool)
    for k in range(n):
        z = rng.standard_normal(N)
        v = cur.mean + sla.solve_triangular(cur.chol.T, z, lower=False)
        log_u = np.log(rng.random())
        prop = linearize(problem, v)
        if log_u < log_acceptance(cur, prop):
            cur = prop
            accepted[k] = True
        samples[k] = cur.u
    meta = {"accepted": accepted, "log_weight": np.zeros(n)}
    if basin is not None:
        meta["basin"] = np.array([int(np.ravel(basin(u))[0]) for u in samples])
    counters = (problem.counter - c0).as_dict()
    counters["total"] = sum(counters.values())
    info = {"acceptance_rate": float(accepted.mean()), "start": np.asarray(start, dtype=float).tolist()}
    return Chain(samples, meta, "sn", seed, {"n": n}, counters, info)
