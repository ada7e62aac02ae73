"""Trust-region inexact Newton-CG and Levenberg-Marquardt minimizers.

Both solvers act on an objective object exposing ``value``, ``gradient``,
``hessian_action``, ``inner`` and ``counter``; gradients are Riesz
representers in ``inner``.  :class:`MAPObjective` adapts an
:class:`~rmap.problem.InverseProblem` with an optional randomization.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from rmap.errors import SolverFailure, StagnationError

log = logging.getLogger(__name__)

REASONS = ("cost-change", "step-size", "gradient-norm", "iteration-cap")


def _trial_value(obj, u):
    """Objective at a trial point; a failed forward solve counts as ``+inf``."""
    try:
        return obj.value(u)
    except SolverFailure as exc:
        log.info("forward solve failed at trial point (%s); rejecting step", exc)
        return np.inf


@dataclass
class SolverConfig:
    """Stopping tolerances and trust-region / CG constants.

    ``delta0``/``delta_max`` default to ``max(1, |u_init|)`` and ``1e3 * delta0``.
    ``cg_max_iters`` defaults to the parameter dimension (TRINCG) or half of it (LM).
    ``preconditioner`` is ``"prior"`` (CG preconditioned by the prior covariance,
    trust region measured in the Cameron-Martin norm) or ``"none"``.
    """

    eps_f: float = 1e-12
    eps_x: float = 1e-10
    eps_g: float = 1e-9
    max_iters: int = 200
    delta0: float = None
    delta_max: float = None
    eta_max: float = 0.5
    cg_max_iters: int = None
    hessian_mode: str = "gauss-newton"
    preconditioner: str = "prior"
    accept_ratio: float = 0.1
    shrink_ratio: float = 0.25
    grow_ratio: float = 0.75
    shrink: float = 0.5
    grow: float = 2.0
    lm_rtol: float = 1e-2

    def __post_init__(self):
        for name in ("eps_f", "eps_x", "eps_g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.hessian_mode not in ("full", "gauss-newton"):
            raise ValueError(f"unknown hessian_mode {self.hessian_mode!r}")
        if self.preconditioner not in ("prior", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptReport:
    iterations: int
    solves: dict
    reason: str
    final_cost: float
    final_gradnorm: float
    cg_iterations: int = 0
    rejected: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def total_solves(self):
        return sum(self.solves.values())

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "solves": dict(self.solves),
            "reason": self.reason,
            "final_cost": self.final_cost,
            "final_gradnorm": self.final_gradnorm,
            "cg_iterations": self.cg_iterations,
            "rejected": self.rejected,
        }


@dataclass
class TrustRegionState:
    u: np.ndarray
    radius: float
    cost: float
    grad: np.ndarray
    gradnorm: float
    iteration: int = 0
    reason: str = None


class MAPObjective:
    """Randomized MAP objective ``J^r`` of an inverse problem, in optimizer form."""

    def __init__(self, problem, randomization=None):
        self.problem = problem
        self.r = randomization

    @property
    def n_params(self):
        return self.problem.n_params

    @property
    def counter(self):
        return self.problem.counter

    def value(self, u):
        return self.problem.randomized_objective(u, self.r)

    def gradient(self, u):
        return self.problem.gradient(u, self.r)

    def hessian_action(self, u, v, gauss_newton=True):
        if gauss_newton:
            return self.problem.gn_hessian_action(u, v)
        return self.problem.hessian_action(u, v, self.r)

    def inner(self, a, b):
        return self.problem.inner(a, b)

    def precondition(self, v):
        return self.problem.prior.apply_c(v)

    def precond_norm(self, v):
        """Norm induced by the inverse preconditioner, ``|v|_{C^-1}``."""
        return float(np.sqrt(self.problem.prior.cinv_norm_sq(v)))


def _boundary_tau(sPs, sPp, pPp, delta):
    """Positive root of ``|s + tau p|^2 = delta^2`` from preconditioned inner products."""
    disc = sPp**2 + pPp * (delta**2 - sPs)
    return (-sPp + np.sqrt(max(disc, 0.0))) / pPp


def steihaug_cg(hess, g, delta, inner, precond=None, tol=0.0, max_iters=None):
    """Approximately minimize ``<g, s> + 1/2 <s, H s>`` subject to ``|s|_P <= delta``.

    ``|s|_P^2 = <s, P^-1 s>`` where ``P`` is the preconditioner (identity when
    ``precond`` is None); it is tracked by recurrences so ``P^-1`` is never applied.

    Returns:
        ``(s, Hs, info)`` where ``info`` has ``iterations``, ``exit`` (one of
        ``"converged"``, ``"negative-curvature"``, ``"boundary"``, ``"max-iters"``),
        ``norm`` (``|s|_P``) and ``pred`` (predicted reduction ``-m(s)``).
    """
    precond = precond or (lambda v: v)
    n = g.size
    max_iters = n if max_iters is None else max(1, max_iters)
    s = np.zeros_like(g)
    Hs = np.zeros_like(g)
    r = g.copy()
    z = precond(r)
    p = -z
    rz = inner(r, z)
    sPs, sPp, pPp = 0.0, 0.0, rz
    exit_ = "max-iters"
    it = 0
    while it < max_iters:
        if np.sqrt(max(inner(r, r), 0.0)) <= tol:
            exit_ = "converged"
            break
        it += 1
        Hp = hess(p)
        curv = inner(p, Hp)
        if curv <= 0:
            tau = _boundary_tau(sPs, sPp, pPp, delta)
            s, Hs = s + tau * p, Hs + tau * Hp
            exit_ = "negative-curvature"
            break
        alpha = rz / curv
        if sPs + 2 * alpha * sPp + alpha**2 * pPp >= delta**2:
            tau = _boundary_tau(sPs, sPp, pPp, delta)
            s, Hs = s + tau * p, Hs + tau * Hp
            exit_ = "boundary"
            break
        s = s + alpha * p
        Hs = Hs + alpha * Hp
        sPs = sPs + 2 * alpha * sPp + alpha**2 * pPp
        r = r + alpha * Hp
        z = precond(r)
        rz_new = inner(r, z)
        beta = rz_new / rz
        rz = rz_new
        sPp = beta * (sPp + alpha * pPp)
        pPp = rz + beta**2 * pPp
        p = -z + beta * p
    else:
        if np.sqrt(max(inner(r, r), 0.0)) <= tol:
            exit_ = "converged"
    if exit_ in ("negative-curvature", "boundary"):
        norm = delta
    else:
        norm = np.sqrt(max(sPs, 0.0))
    pred = -(inner(g, s) + 0.5 * inner(s, Hs))
    return s, Hs, {"iterations": it, "exit": exit_, "norm": norm, "pred": pred}


def _norm(obj, v):
    return float(np.sqrt(max(obj.inner(v, v), 0.0)))


def _start(obj, u_init):
    u = np.array(u_init, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial guess is not finite")
    f = obj.value(u)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial guess")
    return u, f


def trincg_minimize(obj, u_init, cfg=None):
    """Trust-region inexact Newton-CG.

    Args:
        obj: objective (see module docstring); an ``InverseProblem`` is wrapped
            in :class:`MAPObjective` automatically.
        u_init: starting point.
        cfg: :class:`SolverConfig`.

    Returns:
        ``(u_star, OptReport)``.

    Raises:
        StagnationError: the radius collapsed to roundoff without meeting a
            stopping test.
    """
    cfg = cfg or SolverConfig()
    if not hasattr(obj, "value"):
        obj = MAPObjective(obj)
    c0 = obj.counter.snapshot()
    u, f = _start(obj, u_init)
    use_prec = cfg.preconditioner == "prior" and hasattr(obj, "precondition")
    precond = obj.precondition if use_prec else None
    tr_norm = obj.precond_norm if use_prec else (lambda v: _norm(obj, v))
    delta0 = cfg.delta0 if cfg.delta0 is not None else max(1.0, tr_norm(u))
    delta_max = cfg.delta_max if cfg.delta_max is not None else 1e3 * delta0
    gn = cfg.hessian_mode == "gauss-newton"
    g = obj.gradient(u)
    st = TrustRegionState(u, delta0, f, g, _norm(obj, g))
    cg_total = rejected = 0
    history = [st.gradnorm]

    while True:
        if st.gradnorm <= cfg.eps_g:
            st.reason = "gradient-norm"
            break
        if st.iteration >= cfg.max_iters:
            st.reason = "iteration-cap"
            break
        st.iteration += 1
        eta = min(cfg.eta_max, st.gradnorm) * st.gradnorm
        u_k = st.u
        s, _, info = steihaug_cg(
            lambda v: obj.hessian_action(u_k, v, gn), st.grad, st.radius, obj.inner, precond, eta, cfg.cg_max_iters
        )
        cg_total += info["iterations"]
        snorm = _norm(obj, s)
        u_new = st.u + s
        f_new = _trial_value(obj, u_new)
        ared = st.cost - f_new if np.isfinite(f_new) else -np.inf
        pred = info["pred"]
        floor = 1e2 * np.finfo(float).eps * (1 + abs(st.cost))
        if pred <= floor and abs(ared) <= floor:
            # both reductions are below roundoff: trust the model
            rho, ared = 1.0, max(ared, 0.0)
        else:
            rho = ared / pred if pred > 0 else (1.0 if ared >= 0 else -np.inf)

        accepted = rho > cfg.accept_ratio and ared >= 0
        if accepted:
            if rho <= cfg.shrink_ratio:
                st.radius = cfg.shrink * st.radius
            elif rho >= cfg.grow_ratio and info["norm"] >= 0.8 * st.radius:
                st.radius = min(cfg.grow * st.radius, delta_max)
            f_old = st.cost
            st.u, st.cost = u_new, f_new
            st.grad = obj.gradient(u_new)
            st.gradnorm = _norm(obj, st.grad)
            history.append(st.gradnorm)
            if abs(ared) <= cfg.eps_f * (1 + abs(f_old)):
                st.reason = "cost-change"
                break
            if snorm <= cfg.eps_x:
                st.reason = "step-size"
                break
        else:
            rejected += 1
            base = min(st.radius, info["norm"])
            st.radius = (0.0625 if rho <= 0 else cfg.shrink) * base
            if snorm <= cfg.eps_x:
                st.reason = "step-size"
                break
            if st.radius <= 1e-14 * max(1.0, delta0):
                report = _report(obj, c0, st, cg_total, rejected, history, "stagnation")
                raise StagnationError("trust region collapsed", best=st.u.copy(), report=report)

    return st.u, _report(obj, c0, st, cg_total, rejected, history, st.reason)


def _report(obj, c0, st, cg_total, rejected, history, reason):
    return OptReport(
        iterations=st.iteration,
        solves=(obj.counter - c0).as_dict(),
        reason=reason,
        final_cost=float(st.cost),
        final_gradnorm=float(st.gradnorm),
        cg_iterations=cg_total,
        rejected=rejected,
        history=history,
    )


def lm_minimize(obj, u_init, cfg=None):
    """Levenberg-Marquardt with Gauss-Newton Hessian and CG inner solves.

    Each iteration solves ``(lam I + H_GN) s = -g`` by unpreconditioned CG
    (relative residual ``cfg.lm_rtol``, at most ``N/2`` iterations), accepts the
    step if the objective decreases, and divides ``lam`` by 10 on success or
    multiplies it by 10 on failure.
    """
    cfg = cfg or SolverConfig()
    if not hasattr(obj, "value"):
        obj = MAPObjective(obj)
    c0 = obj.counter.snapshot()
    u, f = _start(obj, u_init)
    n = obj.n_params
    lam = 0.5 * (np.sqrt(f / n) + f / n)
    cap = cfg.cg_max_iters if cfg.cg_max_iters is not None else max(1, n // 2)
    g = obj.gradient(u)
    st = TrustRegionState(u, np.inf, f, g, _norm(obj, g))
    cg_total = rejected = 0
    history = [st.gradnorm]
    while True:
        if st.gradnorm <= cfg.eps_g:
            st.reason = "gradient-norm"
            break
        if st.iteration >= cfg.max_iters:
            st.reason = "iteration-cap"
            break
        st.iteration += 1
        u_k, lam_k = st.u, lam
        s, _, info = steihaug_cg(
            lambda v: lam_k * v + obj.hessian_action(u_k, v, True),
            st.grad,
            np.inf,
            obj.inner,
            None,
            cfg.lm_rtol * st.gradnorm,
            cap,
        )
        cg_total += info["iterations"]
        snorm = _norm(obj, s)
        u_new = st.u + s
        f_new = _trial_value(obj, u_new)
        if np.isfinite(f_new) and f_new < st.cost:
            ared = st.cost - f_new
            f_old = st.cost
            st.u, st.cost = u_new, f_new
            st.grad = obj.gradient(u_new)
            st.gradnorm = _norm(obj, st.grad)
            history.append(st.gradnorm)
            lam /= 10.0
            if ared <= cfg.eps_f * (1 + abs(f_old)):
                st.reason = "cost-change"
                break
            if snorm <= cfg.eps_x:
                st.reason = "step-size"
                break
        else:
            rejected += 1
            lam *= 10.0
            if snorm <= cfg.eps_x:
                st.reason = "step-size"
                break
            if lam > 1e300:
                report = _report(obj, c0, st, cg_total, rejected, history, "stagnation")
                raise StagnationError("damping diverged", best=st.u.copy(), report=report)
    return st.u, _report(obj, c0, st, cg_total, rejected, history, st.reason)


def minimize(obj, u_init, cfg=None, method="trincg"):
    if method == "trincg":
        return trincg_minimize(obj, u_init, cfg)
    if method == "lm":
        return lm_minimize(obj, u_init, cfg)
    raise ValueError(f"unknown optimizer {method!r}")
