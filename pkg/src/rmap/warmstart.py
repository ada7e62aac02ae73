"""Initial guesses for consecutive randomized MAP solves.

Linearizing the stationarity condition of the randomized objective about an
anchor point gives the first-order change ``T`` of the minimizer when the
randomization moves from ``(theta_i, eps_i)`` to ``(theta_j, eps_j)``::

    H_GN(anchor) T = M^-1 dG^T Lambda^-1 (theta_j - theta_i) + C^-1 (eps_j - eps_i)

and the next guess is ``u_i + T``.  For a linear forward map this is exact.
"""

import logging

import numpy as np

from rmap.optimizer import SolverConfig, steihaug_cg, trincg_minimize

log = logging.getLogger(__name__)


def random_guess(prior, rng=None, eps=None):
    """``u0 + eps`` with ``eps ~ N(0, C)``; pass ``eps`` to reuse a drawn perturbation."""
    if eps is None:
        eps = prior.perturbation(rng.standard_normal(prior.rank))
    return prior.mean + eps


def map_point(problem, u_init=None, cfg=None):
    """Unrandomized MAP point by TRINCG from ``u_init`` (default: the prior mean)."""
    cfg = cfg or SolverConfig(hessian_mode="full")
    u0 = problem.prior.mean if u_init is None else u_init
    return trincg_minimize(problem, u0, cfg)


class WarmStartContext:
    """Anchor data for sensitivity guesses.

    Args:
        problem: the inverse problem.
        anchor: linearization point; default is the MAP point.
        cg_tol: relative residual for the Hessian solve.
        cg_max_iters: iteration cap for the Hessian solve.
        rank: if given, use a rank-``rank`` spectral surrogate of the
            prior-preconditioned misfit Hessian instead of CG.
    """

    def __init__(self, problem, anchor=None, cg_tol=1e-6, cg_max_iters=200, rank=None):
        self.problem = problem
        if anchor is None:
            anchor, _ = map_point(problem)
        self.anchor = np.asarray(anchor, dtype=float)
        self.cg_tol = cg_tol
        self.cg_max_iters = cg_max_iters
        self.rank = rank
        self._surrogate = None
        if rank is not None:
            self._surrogate = self._build_surrogate(rank)

    def _build_surrogate(self, rank):
        prob = self.problem
        prior = prob.prior
        if not 1 <= rank <= prior.rank:
            raise ValueError(f"surrogate rank must lie in [1, {prior.rank}]")
        J = prob.jacobian(self.anchor)
        A = (J @ prior.V) * np.sqrt(prior.cov_eigs) / prob.noise_sigma
        lam, W = np.linalg.eigh(A.T @ A)
        order = np.argsort(lam)[::-1][:rank]
        return lam[order], W[:, order]

    def solve(self, rhs):
        """Apply ``H_GN(anchor)^-1`` to a Riesz vector; returns ``(T, converged)``."""
        prob = self.problem
        prior = prob.prior
        if self._surrogate is not None:
            lam, W = self._surrogate
            # H = C^-1/2 (I + W lam W^T) C^-1/2 in whitened KL coordinates
            y = prior.coefficients(rhs) * np.sqrt(prior.cov_eigs)
            y = y - W @ ((lam / (1.0 + lam)) * (W.T @ y))
            return prior.V @ (np.sqrt(prior.cov_eigs) * y), True
        tol = self.cg_tol * prob.norm(rhs)
        T, _, info = steihaug_cg(
            lambda v: prob.gn_hessian_action(self.anchor, v),
            -rhs,
            np.inf,
            prob.inner,
            prior.apply_c,
            tol,
            self.cg_max_iters,
        )
        return T, info["exit"] == "converged"

    def right_hand_side(self, d_theta, d_eps):
        prob = self.problem
        rhs = prob.prior.apply_cinv(d_eps)
        if np.any(d_theta):
            state = prob.state(self.anchor)
            rhs = rhs + prob.riesz(prob.model.jacobian_transpose_action(state, d_theta / prob.noise_sigma**2))
        return rhs


def sensitivity_guess(ctx, next, prev=None, u_prev=None):
    """First-order prediction of the minimizer for randomization ``next``.

    Args:
        ctx: :class:`WarmStartContext`.
        next: the upcoming :class:`~rmap.problem.Randomization`.
        prev: randomization of the previous solve; ``None`` means the
            unrandomized problem, whose solution is the anchor.
        u_prev: previous solution (default: the anchor).

    Returns:
        ``(guess, fallback)``; ``fallback`` is true when the Hessian solve did
        not converge and the guess is ``u0 + eps`` instead.
    """
    prob = ctx.problem
    if prev is None:
        d_theta, d_eps = next.theta, next.eps
    else:
        d_theta, d_eps = next.theta - prev.theta, next.eps - prev.eps
    u_prev = ctx.anchor if u_prev is None else u_prev
    if not np.any(d_theta) and not np.any(d_eps):
        return np.array(u_prev, dtype=float), False
    T, ok = ctx.solve(ctx.right_hand_side(d_theta, d_eps))
    if not ok:
        log.warning("warm-start Hessian solve did not converge; using u0 + eps")
        return prob.prior.mean + next.eps, True
    return u_prev + T, False
