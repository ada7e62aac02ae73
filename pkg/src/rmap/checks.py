"""Finite-difference and dot-product self-tests for forward models.

Each check returns a :class:`CheckResult`.  The FD checks take the best
central difference over a short ladder of step sizes, which separates
truncation from cancellation error without tuning one step per problem.
"""

from dataclasses import dataclass

import numpy as np

from rmap.problem import InverseProblem
from rmap.rng import generator

FD_STEPS = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value < self.tol)

    def line(self):
        flag = "ok  " if self.passed else "FAIL"
        return f"{flag} {self.name:<48s} {self.value:10.3e}  (tol {self.tol:.0e})"


def _unit(problem, v):
    return v / problem.norm(v)


def gradient_fd_error(problem, u, v, r=None, steps=FD_STEPS):
    """Relative error of ``<grad J, v>_M`` against central differences of ``J``."""
    f = (lambda x: problem.randomized_objective(x, r)) if r is not None else problem.objective
    exact = problem.inner(problem.gradient(u, r), v)
    errs = [abs((f(u + h * v) - f(u - h * v)) / (2 * h) - exact) / max(abs(exact), 1e-300) for h in steps]
    return float(min(errs))


def hessian_fd_error(problem, u, v, steps=FD_STEPS):
    """Relative error of the full Hessian action against differences of the gradient."""
    exact = problem.hessian_action(u, v)
    scale = max(problem.norm(exact), 1e-300)
    errs = []
    for h in steps:
        fd = (problem.gradient(u + h * v) - problem.gradient(u - h * v)) / (2 * h)
        errs.append(problem.norm(fd - exact) / scale)
    return float(min(errs))


def jacobian_fd_error(problem, u, v, steps=FD_STEPS):
    """Relative error of the incremental forward solve against differences of ``G``."""
    exact = problem.model.jacobian_action(problem.state(u), v)
    scale = max(np.linalg.norm(exact), 1e-300)
    errs = [
        np.linalg.norm((problem.forward(u + h * v) - problem.forward(u - h * v)) / (2 * h) - exact) / scale
        for h in steps
    ]
    return float(min(errs))


def transpose_error(problem, u, v, w):
    """Dot-product test ``|<dG v, w> - <v, dG^T w>| / |<dG v, w>|`` (Euclidean pairing)."""
    state = problem.state(u)
    lhs = float(problem.model.jacobian_action(state, v) @ w)
    rhs = float(v @ problem.model.jacobian_transpose_action(state, w))
    return abs(lhs - rhs) / max(abs(lhs), 1e-300)


def zero_residual_problem(problem, u):
    """Copy of ``problem`` whose data equal ``G(u)`` and whose prior mean is ``u``."""
    prior = problem.prior.with_mean(np.array(u, dtype=float))
    return InverseProblem(problem.model.clone(), prior, problem.forward(u), problem.noise_sigma)


def gn_full_gap(problem, u, v):
    """Relative gap between full and Gauss-Newton Hessian actions at zero residual."""
    z = zero_residual_problem(problem, u)
    full = z.hessian_action(u, v)
    gn = z.gn_hessian_action(u, v)
    return z.norm(full - gn) / max(z.norm(gn), 1e-300)


def gn_min_rayleigh(problem, u, rng, n=5):
    """Smallest Rayleigh quotient ``<v, H_GN v>_M / <v, v>_M`` over random ``v``."""
    q = []
    for _ in range(n):
        v = rng.standard_normal(problem.n_params)
        q.append(problem.inner(v, problem.gn_hessian_action(u, v)) / problem.inner(v, v))
    return float(min(q))


def check_problem(problem, u, label, seed=0):
    """Run the full battery at ``u`` with random directions."""
    rng = generator(seed)
    v = _unit(problem, rng.standard_normal(problem.n_params))
    w = rng.standard_normal(problem.n_obs)
    out = [
        CheckResult(f"{label}: gradient vs FD", gradient_fd_error(problem, u, v), 1e-5),
        CheckResult(f"{label}: incremental forward vs FD", jacobian_fd_error(problem, u, v), 1e-5),
        CheckResult(f"{label}: Hessian action vs FD", hessian_fd_error(problem, u, v), 1e-4),
        CheckResult(f"{label}: dot-product (transpose) test", transpose_error(problem, u, v, w), 1e-8),
        CheckResult(f"{label}: GN = full Hessian at zero residual", gn_full_gap(problem, u, v), 1e-8),
    ]
    q = gn_min_rayleigh(problem, u, rng)
    out.append(CheckResult(f"{label}: GN Hessian positive (-min Rayleigh)", -q, 0.0))
    return out


def default_suite(seed=0, meshes=(8, 16)):
    """Checks on the analytical problems and Helmholtz cases of several sizes."""
    from rmap.analytical import POSTERIORS
    from rmap.helmholtz import make_synthetic_case

    results = []
    for kind, post in POSTERIORS.items():
        problem = post.problem()
        for u in (-0.7, 0.4, 1.3):
            results += check_problem(problem, np.array([u]), f"{kind} at u={u}", seed)
    for nx in meshes:
        case = make_synthetic_case(nx=nx, alpha=8.0, seed=seed)
        problem = case.problem
        rng = generator(seed + 1)
        u = case.truth + 0.05 * rng.standard_normal(problem.n_params)
        results += check_problem(problem, u, f"helmholtz {nx}x{nx}", seed)
    return results
