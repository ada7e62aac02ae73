"""Bayesian inverse problem: data misfit plus Gaussian prior, with derivative actions.

All parameter-space gradients and Hessian actions are Riesz representers in the
prior's mass-weighted inner product, so ``<grad J, v>_M`` is the directional
derivative.  Forward models report their own PDE-solve tallies.
"""

import copy
from collections import OrderedDict
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse.linalg as spla

from rmap.errors import SolverFailure


@dataclass
class SolveCounter:
    forward: int = 0
    adjoint: int = 0
    incremental_forward: int = 0
    incremental_adjoint: int = 0

    @property
    def total(self):
        return self.forward + self.adjoint + self.incremental_forward + self.incremental_adjoint

    def snapshot(self):
        return SolveCounter(**self.as_dict())

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __sub__(self, other):
        return SolveCounter(**{k: v - getattr(other, k) for k, v in self.as_dict().items()})

    def __add__(self, other):
        return SolveCounter(**{k: v + getattr(other, k) for k, v in self.as_dict().items()})


class ForwardModel:
    """Interface implemented by parameter-to-observable maps.

    Derivative outputs are Euclidean (dual) vectors; :class:`InverseProblem`
    converts them into ``M``-Riesz representers.  Each method documents the
    counter it increments.
    """

    n_params: int
    n_obs: int

    def __init__(self):
        self.counter = SolveCounter()

    def solve_state(self, u):
        """Forward solve at ``u``; +1 forward."""
        raise NotImplementedError

    def observe(self, state):
        raise NotImplementedError

    def solve_adjoint(self, state, source):
        """Adjoint solve driven by observation-space ``source``; +1 adjoint."""
        raise NotImplementedError

    def adjoint_gradient(self, state, adj):
        """``dG(u)^T source`` assembled from an adjoint solution (no solve)."""
        raise NotImplementedError

    def jacobian_action(self, state, v):
        """``dG(u) v``; +1 incremental forward."""
        raise NotImplementedError

    def misfit_hessian_action(self, state, adj, v, weight, full=True):
        """Hessian of ``1/2 weight |G(u) - d|^2`` applied to ``v``.

        ``adj`` must come from :meth:`solve_adjoint` with source
        ``weight * (G(u) - d)``; it is ignored when ``full`` is false.
        +1 incremental forward, +1 incremental adjoint.
        """
        raise NotImplementedError

    def second_order_action(self, state, source, v):
        """``sum_k source_k * d^2 G_k(u) v`` (Euclidean)."""
        raise NotImplementedError

    def jacobian_transpose_action(self, state, r):
        return self.adjoint_gradient(state, self.solve_adjoint(state, r))

    def dense_jacobian(self, state):
        """Assemble ``dG(u)`` with ``min(n_obs, n_params)`` linearized solves.

        Rows come from adjoint solves when there are fewer observations than
        parameters, columns from incremental forward solves otherwise.
        """
        if self.n_obs < self.n_params:
            eye = np.eye(self.n_obs)
            return np.vstack([self.jacobian_transpose_action(state, eye[k]) for k in range(self.n_obs)])
        eye = np.eye(self.n_params)
        return np.column_stack([self.jacobian_action(state, eye[:, i]) for i in range(self.n_params)])

    def clear_cache(self):
        pass

    def clone(self):
        other = copy.deepcopy(self)
        other.clear_cache()
        return other


class ExplicitModel(ForwardModel):
    """Forward map given by closed-form callables (no PDE).

    Args:
        fun: ``u -> G(u)``.
        jac: ``u -> dG(u)`` as a ``(n_obs, n_params)`` array.
        second: ``(u, r, v) -> sum_k r_k d^2G_k(u) v``; ``None`` for linear maps.
    """

    def __init__(self, fun, jac, second=None, n_params=None, n_obs=None):
        super().__init__()
        self.fun = fun
        self.jac = jac
        self.second = second
        self.n_params = n_params
        self.n_obs = n_obs

    def solve_state(self, u):
        self.counter.forward += 1
        u = np.array(u, dtype=float)
        g = np.atleast_1d(np.asarray(self.fun(u), dtype=float))
        if not np.all(np.isfinite(g)):
            raise SolverFailure("forward map returned non-finite values", u=u)
        return {"u": u, "obs": g, "jac": np.atleast_2d(np.asarray(self.jac(u), dtype=float))}

    def observe(self, state):
        return state["obs"]

    def solve_adjoint(self, state, source):
        self.counter.adjoint += 1
        return np.asarray(source, dtype=float)

    def adjoint_gradient(self, state, adj):
        return state["jac"].T @ adj

    def jacobian_action(self, state, v):
        self.counter.incremental_forward += 1
        return state["jac"] @ v

    def misfit_hessian_action(self, state, adj, v, weight, full=True):
        self.counter.incremental_forward += 1
        self.counter.incremental_adjoint += 1
        J = state["jac"]
        out = J.T @ (weight * (J @ v))
        if full and self.second is not None:
            out = out + self.second(state["u"], adj, v)
        return out

    def second_order_action(self, state, source, v):
        if self.second is None:
            return np.zeros(self.n_params)
        return self.second(state["u"], source, v)

    def dense_jacobian(self, state):
        if self.n_obs < self.n_params:
            self.counter.adjoint += self.n_obs
        else:
            self.counter.incremental_forward += self.n_params
        return state["jac"].copy()


class _LinearMap:
    def __init__(self, B):
        self.B = B

    def fun(self, u):
        return self.B @ u

    def jac(self, u):
        return self.B


class _PowerMap:
    def __init__(self, p):
        self.p = p

    def fun(self, u):
        return u**self.p

    def jac(self, u):
        return np.array([[self.p * u[0] ** (self.p - 1)]])

    def second(self, u, r, v):
        p = self.p
        return np.array([r[0] * p * (p - 1) * u[0] ** (p - 2) * v[0]])


def linear_model(B):
    """``G(u) = B u``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    m = _LinearMap(B)
    return ExplicitModel(m.fun, m.jac, None, n_params=B.shape[1], n_obs=B.shape[0])


def power_model(p):
    """Scalar ``G(u) = u^p``."""
    m = _PowerMap(p)
    return ExplicitModel(m.fun, m.jac, m.second, n_params=1, n_obs=1)


@dataclass
class Randomization:
    """Data perturbation ``theta ~ N(0, Lambda)`` and prior-mean perturbation ``eps ~ N(0, C)``."""

    theta: np.ndarray
    eps: np.ndarray
    index: int = -1

    @classmethod
    def zero(cls, n_obs, n_params):
        return cls(np.zeros(n_obs), np.zeros(n_params))

    def __sub__(self, other):
        return Randomization(self.theta - other.theta, self.eps - other.eps)


class InverseProblem:
    """Posterior ``exp(-J)`` with ``J(u) = 1/2 |d - G(u)|^2_Lambda + 1/2 |u - u0|^2_C``.

    Forward and adjoint solutions are cached per point and reused by gradient
    and Hessian actions.  The cache holds the two most recent points so that a
    rejected trial step does not evict the current iterate.
    """

    cache_size = 2

    def __init__(self, model, prior, observations, noise_sigma):
        if noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        d = np.atleast_1d(np.asarray(observations, dtype=float))
        if d.size < 1:
            raise ValueError("need at least one observation")
        if model.n_obs is not None and model.n_obs != d.size:
            raise ValueError(f"model has {model.n_obs} observables but {d.size} data were given")
        if model.n_params is not None and model.n_params != prior.dim:
            raise ValueError("prior dimension does not match the parameter dimension")
        self.model = model
        self.prior = prior
        self.observations = d
        self.noise_sigma = float(noise_sigma)
        self._mass_lu = None
        if prior.mass is not None:
            self._mass_lu = spla.splu(prior.mass.tocsc())
        self._cache = OrderedDict()

    # ---------------------------------------------------------------- basics
    @property
    def n_params(self):
        return self.prior.dim

    @property
    def n_obs(self):
        return self.observations.size

    @property
    def noise_precision(self):
        return 1.0 / self.noise_sigma**2

    @property
    def counter(self):
        return self.model.counter

    @property
    def randomization_width(self):
        return self.n_obs + self.prior.rank

    def inner(self, a, b):
        return self.prior.inner(a, b)

    def norm(self, v):
        return self.prior.norm(v)

    def riesz(self, dual):
        """Riesz representer ``M^-1 dual`` of a Euclidean dual vector."""
        if self._mass_lu is None:
            return dual
        return self._mass_lu.solve(np.asarray(dual, dtype=float))

    def randomization_from_normals(self, z, index=-1):
        z = np.asarray(z)
        theta = self.noise_sigma * z[: self.n_obs]
        eps = self.prior.perturbation(z[self.n_obs : self.n_obs + self.prior.rank])
        return Randomization(theta, eps, index)

    def draw_randomization(self, rng):
        return self.randomization_from_normals(rng.standard_normal(self.randomization_width))

    def _targets(self, r):
        if r is None:
            return self.observations, self.prior.mean
        return self.observations + r.theta, self.prior.mean + r.eps

    # ---------------------------------------------------------------- caching
    def _entry(self, u):
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        entry = self._cache.get(key)
        if entry is None:
            entry = {"state": self.model.solve_state(u), "adj": {}}
            self._cache[key] = entry
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return entry

    def state(self, u):
        return self._entry(u)["state"]

    def _adjoint(self, u, dhat):
        entry = self._entry(u)
        key = dhat.tobytes()
        if key not in entry["adj"]:
            source = self.noise_precision * (self.model.observe(entry["state"]) - dhat)
            entry["adj"] = {key: self.model.solve_adjoint(entry["state"], source)}
        return entry["state"], entry["adj"][key]

    def clear_cache(self):
        self._cache = OrderedDict()
        self.model.clear_cache()

    def clone(self):
        """Independent copy with its own cache and zeroed counters."""
        other = copy.copy(self)
        other.model = self.model.clone()
        other.model.counter = SolveCounter()
        other._mass_lu = None if self.prior.mass is None else spla.splu(self.prior.mass.tocsc())
        other.clear_cache()
        return other

    def __getstate__(self):
        st = self.__dict__.copy()
        st["_mass_lu"] = None
        st["_cache"] = OrderedDict()
        return st

    def __setstate__(self, st):
        self.__dict__.update(st)
        if self.prior.mass is not None:
            self._mass_lu = spla.splu(self.prior.mass.tocsc())

    # ---------------------------------------------------------------- values
    def forward(self, u):
        return self.model.observe(self.state(u)).copy()

    def misfit(self, u, dhat=None):
        dhat = self.observations if dhat is None else dhat
        res = dhat - self.model.observe(self.state(u))
        return 0.5 * self.noise_precision * float(res @ res)

    def randomized_objective(self, u, r):
        dhat, uhat = self._targets(r)
        return self.misfit(u, dhat) + 0.5 * self.prior.cinv_norm_sq(np.asarray(u) - uhat)

    def objective(self, u):
        return self.randomized_objective(u, None)

    # ---------------------------------------------------------------- derivatives
    def gradient(self, u, r=None):
        dhat, uhat = self._targets(r)
        state, adj = self._adjoint(u, dhat)
        misfit_grad = self.riesz(self.model.adjoint_gradient(state, adj))
        return misfit_grad + self.prior.apply_cinv(np.asarray(u) - uhat)

    def hessian_action(self, u, v, r=None):
        dhat, _ = self._targets(r)
        state, adj = self._adjoint(u, dhat)
        h = self.model.misfit_hessian_action(state, adj, v, self.noise_precision, full=True)
        return self.riesz(h) + self.prior.apply_cinv(v)

    def gn_hessian_action(self, u, v):
        state = self.state(u)
        h = self.model.misfit_hessian_action(state, None, v, self.noise_precision, full=False)
        return self.riesz(h) + self.prior.apply_cinv(v)

    def euclidean_gradient(self, u, r=None):
        """Gradient with respect to the coefficient vector (``M`` times the Riesz gradient)."""
        return self.prior.apply_mass(self.gradient(u, r))

    def jacobian(self, u):
        """Dense ``dG(u)``, shape ``(n_obs, n_params)``."""
        return self.model.dense_jacobian(self.state(u))

    def dense_gn_hessian(self, u, jac=None):
        """Euclidean Gauss-Newton Hessian ``J^T Lambda^-1 J + M C^-1``."""
        J = self.jacobian(u) if jac is None else jac
        return self.noise_precision * (J.T @ J) + self.prior.precision_matrix()

    def randomized(self, r=None):
        from rmap.optimizer import MAPObjective

        return MAPObjective(self, r)


def make_linear_problem(n_params=10, n_obs=6, noise_sigma=0.5, prior_var=1.0, seed=0):
    """Random linear-Gaussian test problem.

    ``B`` has iid ``N(0, 1/n_params)`` entries, the prior is ``N(0, prior_var I)``
    and the data are ``B u_true + noise`` with ``u_true`` drawn from the prior.

    Returns:
        ``(problem, B)``.
    """
    from rmap.prior import GaussianMeasure
    from rmap.rng import STREAM_DATA, generator

    rng = generator(seed, STREAM_DATA)
    B = rng.standard_normal((n_obs, n_params)) / np.sqrt(n_params)
    prior = GaussianMeasure.from_covariance(np.zeros(n_params), prior_var * np.eye(n_params))
    truth = np.sqrt(prior_var) * rng.standard_normal(n_params)
    data = B @ truth + noise_sigma * rng.standard_normal(n_obs)
    return InverseProblem(linear_model(B), prior, data, noise_sigma), B


def linear_posterior(problem, B):
    """Closed-form posterior mean and covariance for ``G(u) = B u`` (Euclidean prior)."""
    prec = problem.noise_precision * B.T @ B + problem.prior.precision_matrix()
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    rhs = problem.noise_precision * B.T @ problem.observations + problem.prior.precision_matrix() @ problem.prior.mean
    return cov @ rhs, cov
