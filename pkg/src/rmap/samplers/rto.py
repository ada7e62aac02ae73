"""Randomize-then-optimize (RTO) and its modified variant.

Both minimize a projection of the whitened stacked residual

    F(u) = [ sigma^-1 (G(u) - d - theta) ; W (u - u0 - eps) ],   W = C^-1/2 in KL coordinates,

using the stacked Jacobian ``Gbar = [sigma^-1 dG(u_MAP); W]`` frozen at the MAP
point.  ``"qr"`` minimizes ``1/2 |Q^T F(u)|^2`` with ``Gbar = Q R`` (thin QR),
``"modified"`` minimizes ``1/2 F^T Gbar M^-1 Gbar^T F``.  For a linear forward
map both reduce to the rMAP stationarity condition.
"""

import numpy as np

from rmap.errors import SolverFailure, StagnationError, UnsupportedDimensionError
from rmap.optimizer import SolverConfig
from rmap.rng import CounterStream
from rmap.samplers.rmap import _resolve_optimizer, records_to_chain
from rmap.warmstart import map_point

VARIANTS = ("qr", "modified")


def whitening_matrix(prior):
    """Matrix ``W`` with ``W v = prior.whiten(v)``."""
    MV = prior.V if prior.mass is None else prior.mass @ prior.V
    return (MV / np.sqrt(prior.cov_eigs)).T


def stacked_jacobian(problem, u_map, jac=None):
    J = problem.jacobian(u_map) if jac is None else jac
    return np.vstack([J / problem.noise_sigma, whitening_matrix(problem.prior)])


def projector(problem, Gbar, variant):
    """Symmetric weight ``A`` so that the RTO objective is ``1/2 F^T A F``."""
    if variant == "qr":
        Q, R = np.linalg.qr(Gbar)
        if np.min(np.abs(np.diag(R))) <= 1e-14 * np.max(np.abs(np.diag(R))):
            raise np.linalg.LinAlgError("stacked Jacobian is rank deficient")
        return Q @ Q.T
    if variant == "modified":
        Minv_GT = np.column_stack([problem.riesz(row) for row in Gbar])
        return Gbar @ Minv_GT
    raise ValueError(f"unknown RTO variant {variant!r}")


class RTOObjective:
    """``1/2 F(u)^T A F(u)`` with Gauss-Newton or full Hessian actions."""

    def __init__(self, problem, A, randomization):
        self.problem = problem
        self.A = A
        self.r = randomization
        self.W = whitening_matrix(problem.prior)
        self.K = problem.n_obs

    @property
    def n_params(self):
        return self.problem.n_params

    @property
    def counter(self):
        return self.problem.counter

    def residual(self, u):
        p = self.problem
        res_obs = (p.forward(u) - p.observations - self.r.theta) / p.noise_sigma
        res_pr = self.W @ (np.asarray(u) - p.prior.mean - self.r.eps)
        return np.concatenate([res_obs, res_pr])

    def value(self, u):
        F = self.residual(u)
        return 0.5 * float(F @ self.A @ F)

    def _dF_transpose(self, u, y):
        p = self.problem
        state = p.state(u)
        dual = p.model.jacobian_transpose_action(state, y[: self.K] / p.noise_sigma) + self.W.T @ y[self.K :]
        return p.riesz(dual)

    def gradient(self, u):
        return self._dF_transpose(u, self.A @ self.residual(u))

    def hessian_action(self, u, v, gauss_newton=True):
        p = self.problem
        state = p.state(u)
        dFv = np.concatenate([p.model.jacobian_action(state, v) / p.noise_sigma, self.W @ v])
        out = self._dF_transpose(u, self.A @ dFv)
        if not gauss_newton:
            y = self.A @ self.residual(u)
            out = out + p.riesz(p.model.second_order_action(state, y[: self.K] / p.noise_sigma, v))
        return out

    def inner(self, a, b):
        return self.problem.inner(a, b)

    def precondition(self, v):
        return self.problem.prior.apply_c(v)

    def precond_norm(self, v):
        return float(np.sqrt(self.problem.prior.cinv_norm_sq(v)))


def rto_chain(problem, n, variant="qr", seed=0, cfg=None, optimizer="trincg", map_point_value=None, start="map"):
    """Draw ``n`` RTO samples using the same randomization stream as rMAP.

    Args:
        variant: ``"qr"`` or ``"modified"``.
        start: ``"map"`` or ``"random"`` (``u0 + eps``).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown RTO variant {variant!r}")
    cfg = cfg or SolverConfig()
    opt = _resolve_optimizer(optimizer)
    setup = problem.clone()
    u_map = map_point_value if map_point_value is not None else map_point(setup)[0]
    Gbar = stacked_jacobian(setup, u_map)
    A = projector(setup, Gbar, variant)
    work = problem.clone()
    stream = CounterStream(seed, work.randomization_width)
    z = stream.normals_block(0, n)
    records = []
    for j in range(n):
        r = work.randomization_from_normals(z[j], index=j)
        rec = {"index": j, "theta": r.theta, "eps": r.eps}
        c0 = work.counter.snapshot()
        u_init = u_map.copy() if start == "map" else work.prior.mean + r.eps
        try:
            u, rep = opt(RTOObjective(work, A, r), u_init, cfg)
            if rep.reason == "iteration-cap":
                raise StagnationError(f"iteration cap reached with gradient norm {rep.final_gradnorm:.3e}")
            rec.update(u=u, iterations=rep.iterations, reason=rep.reason, solves=rep.total_solves,
                       cg_iterations=rep.cg_iterations, final_gradnorm=rep.final_gradnorm)
        except (StagnationError, SolverFailure) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["counter"] = (work.counter - c0).as_dict()
        records.append(rec)
    config = {"n": n, "variant": variant, "start": start, "solver": cfg.to_dict()}
    info = {"variant": variant, "map_point": np.asarray(u_map).tolist(), "failed": sum("error" in r for r in records)}
    chain = records_to_chain(records, problem, f"rto-{variant}", seed, config, setup.counter, info)
    chain.info["stacked_jacobian"] = Gbar.tolist() if problem.n_params == 1 else None
    return chain


def rto_importance_weights(chain, problem):
    """Importance weights ``posterior / RTO proposal`` for a scalar parameter.

    With ``q`` the unit vector spanning the stacked Jacobian at the MAP point,
    an RTO sample solves ``phi(u) = q . [sigma^-1 (G(u) - d); v^-1/2 (u - u0)] = xi``
    with ``xi ~ N(0, 1)``, so its density is ``N(phi(u)) |phi'(u)|`` (one branch
    of the change of variables).
    """
    if problem.n_params != 1 or problem.n_obs != 1:
        raise UnsupportedDimensionError("RTO importance weights are implemented for scalar problems only")
    Gbar = chain.info.get("stacked_jacobian")
    if Gbar is None:
        raise ValueError("chain carries no stacked Jacobian; was it produced by rto_chain?")
    q = np.asarray(Gbar, dtype=float).ravel()
    q = q / np.linalg.norm(q)
    sig = problem.noise_sigma
    w = whitening_matrix(problem.prior)[0, 0]
    u0, d = problem.prior.mean[0], problem.observations[0]
    lw = np.empty(len(chain))
    for i, u in enumerate(chain.samples[:, 0]):
        x = np.array([u])
        g = problem.forward(x)[0]
        dg = problem.jacobian(x)[0, 0]
        phi = q[0] * (g - d) / sig + q[1] * w * (u - u0)
        dphi = q[0] * dg / sig + q[1] * w
        lw[i] = -problem.objective(x) + 0.5 * phi**2 - np.log(abs(dphi))
    out = chain.copy()
    out.meta["log_weight"] = lw
    out.method = chain.method + "+weighted"
    return out
