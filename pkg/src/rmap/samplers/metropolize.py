"""Approximate Metropolization and importance weighting of rMAP samples.

An rMAP sample ``u`` is the image of ``(theta, eps)`` under the optimizer
map.  Linearizing that map at ``u`` gives a proposal density whose ratio to
the posterior is, up to a constant,

    w(u) = exp(-1/2 K^T H K) |det(I + C^1/2 dG^* Lambda^-1 dG C^1/2)|^-1/2

with ``K = Lambda^-1 (dG (u - u0) - (G(u) - d))`` and
``H^-1 = Lambda^-1 + Lambda^-1 dG C dG^* Lambda^-1``.  The ``"simplified"``
mode keeps only the determinant factor; ``"full"`` keeps both.
"""

from dataclasses import dataclass

import numpy as np

from rmap.rng import STREAM_METROPOLIS, generator


@dataclass
class JacobianInfo:
    log_absdet: float
    method: str = "dense-eig"
    rank: int = None


def _whitened_jacobian(problem, jac):
    prior = problem.prior
    return (jac @ prior.V) * np.sqrt(prior.cov_eigs) / problem.noise_sigma


def jacobian_info(problem, u, method="dense-eig", rank=None, jac=None):
    """``log det(I + C^1/2 dG^* Lambda^-1 dG C^1/2)`` at ``u``.

    The operator equals ``I + A^T A`` with ``A = Lambda^-1/2 dG C^1/2`` in
    whitened KL coordinates; its eigenvalues are ``1 + s_i^2`` for the singular
    values ``s_i`` of ``A``.  ``method="low-rank"`` keeps the ``rank`` largest.
    """
    if method not in ("dense-eig", "low-rank"):
        raise ValueError(f"unknown determinant method {method!r}")
    J = problem.jacobian(u) if jac is None else jac
    A = _whitened_jacobian(problem, J)
    s = np.linalg.svd(A, compute_uv=False)
    if method == "low-rank":
        if rank is None:
            raise ValueError("low-rank determinant needs a rank")
        s = s[:rank]
    return JacobianInfo(float(np.sum(np.log1p(s**2))), method, None if method == "dense-eig" else rank)


def linearization_log_quad(problem, u, jac=None):
    """``-1/2 K^T H K`` for the full weight (see module docstring)."""
    J = problem.jacobian(u) if jac is None else jac
    prior = problem.prior
    s2 = problem.noise_sigma**2
    K = (J @ (np.asarray(u) - prior.mean) - (problem.forward(u) - problem.observations)) / s2
    Hinv = np.eye(problem.n_obs) / s2 + (J @ prior.covariance_matrix() @ J.T) / s2**2
    return float(-0.5 * K @ np.linalg.solve(Hinv, K))


def rmap_log_weight(log_det, log_quad=None, mode="simplified"):
    """Log of the posterior-to-proposal ratio, up to a constant."""
    log_det = np.asarray(log_det, dtype=float)
    if mode == "simplified":
        return -0.5 * log_det
    if mode == "full":
        if log_quad is None:
            raise ValueError("full weights need the linearization quadratic term")
        return np.asarray(log_quad, dtype=float) - 0.5 * log_det
    raise ValueError(f"unknown metropolization mode {mode!r}")


def _chain_log_weight(chain, mode):
    if "log_det" not in chain.meta:
        raise ValueError("chain has no jacobian metadata (log_det); sample with jacobian=True")
    if mode == "full" and "log_quad" not in chain.meta:
        raise ValueError("chain has no log_quad metadata needed for full weights")
    return rmap_log_weight(chain.meta["log_det"], chain.meta.get("log_quad"), mode)


def importance_weights(chain, mode="simplified"):
    """Copy of ``chain`` with ``log_weight`` set for weighted estimates."""
    out = chain.copy()
    out.meta["log_weight"] = _chain_log_weight(chain, mode)
    out.method = chain.method + "+weighted"
    out.info["weight_mode"] = mode
    return out


def metropolize_rmap(chain, mode="simplified", seed=None):
    """Independence Metropolis-Hastings over the proposal stream of ``chain``.

    Proposal ``k`` replaces the current state with probability
    ``min(1, w(u_k) / w(u_current))``; a rejection repeats the current state.
    The first proposal is always accepted.

    Returns:
        A chain of the same length whose ``source`` column gives the proposal
        index held at each step and ``accepted`` the accept flags.
    """
    lw = _chain_log_weight(chain, mode)
    n = len(chain)
    seed = chain.seed if seed is None else seed
    unif = generator(0 if seed is None else seed, STREAM_METROPOLIS).random(n)
    source = np.zeros(n, dtype=int)
    accepted = np.zeros(n, dtype=bool)
    cur = 0
    for k in range(n):
        if k == 0 or np.log(unif[k]) < lw[k] - lw[cur]:
            cur = k
            accepted[k] = True
        source[k] = cur
    out = chain.subset(source)
    out.failures = list(chain.failures)
    out.meta["source"] = source
    out.meta["accepted"] = accepted
    out.meta["log_weight"] = np.zeros(n)
    out.method = chain.method + "+metropolized"
    out.info = dict(chain.info, metropolis_mode=mode, rejections="repeat-previous", acceptance_rate=float(accepted.mean()))
    return out
