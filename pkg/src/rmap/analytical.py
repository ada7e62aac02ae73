"""Scalar test posteriors with a polynomial forward map and exact references.

``J1`` has forward map ``u^2`` (bimodal posterior), ``J2`` has ``u^3`` (unimodal
posterior whose randomized objectives develop a spurious local minimum).  Both
have unit prior variance and noise standard deviation 0.2.

The reference value for the mean of the optimizer operator ``S(theta, eps)``
(the global minimizer of the randomized objective) is computed by quadrature
over ``(theta, eps)``.  ``S`` jumps where the global minimizer switches basin,
so the default ``"split"`` rule integrates ``eps`` piecewise between detected
jump points; plain tensor Gauss-Hermite is available but converges slowly.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from rmap.prior import GaussianMeasure
from rmap.problem import InverseProblem, power_model

BRACKET = (-10.0, 10.0)


@dataclass(frozen=True)
class AnalyticalPosterior:
    """``J(u) = (u - m)^2 / (2 v) + (u^p - d)^2 / (2 sigma^2)``."""

    kind: str
    power: int
    prior_mean: float
    data: float
    prior_var: float = 1.0
    noise_sigma: float = 0.2

    # ------------------------------------------------------------ objective
    def forward(self, u):
        return np.asarray(u, dtype=float) ** self.power

    def cost(self, u, theta=0.0, eps=0.0):
        """Randomized negative log posterior, vectorized over all arguments."""
        u = np.asarray(u, dtype=float)
        return 0.5 * (u - self.prior_mean - eps) ** 2 / self.prior_var + 0.5 * (
            self.data + theta - u**self.power
        ) ** 2 / self.noise_sigma**2

    def cost_grad(self, u, theta=0.0, eps=0.0):
        p, s2 = self.power, self.noise_sigma**2
        return (u - self.prior_mean - eps) / self.prior_var + (u**p - self.data - theta) * p * u ** (p - 1) / s2

    def cost_hess(self, u, theta=0.0, eps=0.0):
        p, s2 = self.power, self.noise_sigma**2
        d2g = p * (p - 1) * u ** (p - 2) if p > 1 else 0.0 * u
        return 1.0 / self.prior_var + ((p * u ** (p - 1)) ** 2 + (u**p - self.data - theta) * d2g) / s2

    def problem(self):
        """The same posterior as an :class:`InverseProblem`."""
        prior = GaussianMeasure.from_covariance([self.prior_mean], [[self.prior_var]])
        return InverseProblem(power_model(self.power), prior, [self.data], self.noise_sigma)

    # ------------------------------------------------------------ density
    @cached_property
    def modes(self):
        """Local maxima of the posterior density, by grid scan plus Newton polish."""
        grid = np.linspace(*BRACKET, 200001)
        f = self.cost(grid)
        idx = np.where((f[1:-1] < f[:-2]) & (f[1:-1] <= f[2:]))[0] + 1
        u = grid[idx]
        for _ in range(50):
            u = u - self.cost_grad(u) / self.cost_hess(u)
        return np.sort(u)

    @cached_property
    def normalizer(self):
        fmin = float(np.min(self.cost(self.modes)))
        val, _ = integrate.quad(
            lambda u: np.exp(fmin - self.cost(u)), *BRACKET, points=list(self.modes), limit=500, epsabs=0, epsrel=1e-13
        )
        return val, fmin

    def density(self, u):
        """Normalized posterior density ``exp(-J(u)) / Z``."""
        z, fmin = self.normalizer
        return np.exp(fmin - self.cost(u)) / z

    def mass(self, a, b):
        """Posterior probability of ``[a, b]`` (limits clipped to the bracket holding all mass)."""
        a, b = max(a, BRACKET[0]), min(b, BRACKET[1])
        if a >= b:
            return 0.0
        pts = [m for m in self.modes if a < m < b]
        return integrate.quad(self.density, a, b, points=pts or None, limit=500, epsabs=1e-14)[0]

    def moment(self, k=1):
        pts = list(self.modes)
        return integrate.quad(lambda u: u**k * self.density(u), *BRACKET, points=pts, limit=500, epsabs=1e-14)[0]

    def basin(self, u):
        """Index of the nearest posterior mode."""
        u = np.asarray(u, dtype=float)
        return np.argmin(np.abs(u[..., None] - self.modes), axis=-1)

    # ------------------------------------------------------------ optimizer operator
    def local_minimize(self, start, theta, eps, tol=1e-10, max_iters=200):
        """Batched safeguarded Newton with Armijo backtracking.

        Returns ``(u, converged)``; ``converged`` flags ``|J'(u)| <= tol``.
        """
        theta, eps, u = np.broadcast_arrays(
            np.asarray(theta, dtype=float), np.asarray(eps, dtype=float), np.asarray(start, dtype=float)
        )
        shape = u.shape
        u, theta, eps = u.astype(float).ravel(), theta.ravel(), eps.ravel()
        active = np.ones(u.shape, dtype=bool)
        for _ in range(max_iters):
            g = self.cost_grad(u[active], theta[active], eps[active])
            done = np.abs(g) <= tol
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            idx, g = idx[~done], g[~done]
            if idx.size == 0:
                break
            ua, th, ep = u[idx], theta[idx], eps[idx]
            h = self.cost_hess(ua, th, ep)
            step = np.where(h > 0, -g / np.where(h > 0, h, 1.0), -np.sign(g))
            step = np.clip(step, -1.0, 1.0)
            f0 = self.cost(ua, th, ep)
            t = np.ones_like(ua)
            # Newton steps whose predicted decrease is below roundoff skip the line search
            tiny = (h > 0) & (np.abs(g * step) <= 1e-13 * (1.0 + f0))
            for _ in range(60):
                bad = ~tiny & (self.cost(ua + t * step, th, ep) > f0 + 1e-4 * t * g * step)
                if not bad.any():
                    break
                t = np.where(bad, 0.5 * t, t)
            moved = ua + t * step
            # a step lost in roundoff leaves u unchanged; stop refining it
            stuck = moved == ua
            u[idx] = moved
            active[idx[stuck]] = False
        g = self.cost_grad(u, theta, eps)
        fscale = 1.0 + np.abs(self.cost(u, theta, eps))
        converged = np.abs(g) <= tol * fscale
        return u.reshape(shape), converged.reshape(shape)

    def global_minimize(self, theta, eps, tol=1e-10):
        """Global minimizer ``S(theta, eps)`` by multi-start local Newton.

        Starts: the randomized prior mean, both posterior modes, and +-3; the
        lowest objective value wins.

        Raises:
            RuntimeError: no start converged for some node.
        """
        theta, eps = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(eps, dtype=float))
        starts = [self.prior_mean + eps] + [np.full(theta.shape, m) for m in self.modes] + [
            np.full(theta.shape, 3.0),
            np.full(theta.shape, -3.0),
        ]
        sols, vals, oks = [], [], []
        for s0 in starts:
            u, ok = self.local_minimize(s0, theta, eps, tol)
            sols.append(u)
            vals.append(np.where(ok, self.cost(u, theta, eps), np.inf))
            oks.append(ok)
        vals = np.array(vals)
        if not np.all(np.isfinite(vals.min(axis=0))):
            bad = np.flatnonzero(~np.isfinite(vals.min(axis=0)))[0]
            raise RuntimeError(f"optimizer failed at node theta={theta.flat[bad]!r}, eps={eps.flat[bad]!r}")
        best = np.argmin(vals, axis=0)
        out = np.take_along_axis(np.array(sols), best[None], axis=0)[0]
        return out if out.ndim else float(out)


J1 = AnalyticalPosterior("J1", power=2, prior_mean=0.8, data=1.0)
J2 = AnalyticalPosterior("J2", power=3, prior_mean=1.0, data=0.8)
LINEAR = AnalyticalPosterior("linear", power=1, prior_mean=0.8, data=1.0)
POSTERIORS = {"J1": J1, "J2": J2, "linear": LINEAR}


def get_posterior(kind):
    if isinstance(kind, AnalyticalPosterior):
        return kind
    try:
        return POSTERIORS[kind]
    except KeyError:
        raise ValueError(f"unknown analytical posterior {kind!r}; choose from {sorted(POSTERIORS)}") from None


def exact_density(kind, u):
    """Normalized posterior density of ``kind`` at ``u``."""
    return get_posterior(kind).density(u)


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature rule for ``E[S(theta, eps)]``.

    Attributes:
        order: Gauss-Hermite order in ``theta`` (and in ``eps`` for the tensor rule).
        method: ``"split"`` (piecewise Gauss-Legendre in ``eps`` between jumps of
            ``S``) or ``"gauss-hermite"`` (tensor rule).
        panel_order: Gauss-Legendre nodes per unit-length panel for ``"split"``.
        scan_points: grid used to locate jumps of ``S`` in ``eps``.
    """

    order: int = 40
    method: str = "split"
    panel_order: int = 20
    scan_points: int = 2001

    def __post_init__(self):
        if self.order < 20:
            raise ValueError("quadrature order must be at least 20")
        if self.method not in ("split", "gauss-hermite"):
            raise ValueError(f"unknown quadrature method {self.method!r}")


def _gauss_hermite(order):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def _jumps(post, theta, grid, vals, tol=1e-13):
    """Locate the ``eps`` values where ``S(theta, .)`` jumps, by bisection."""
    h = grid[1] - grid[0]
    idx = np.flatnonzero(np.abs(np.diff(vals)) > 20 * h + 1e-3)
    out = []
    for i in idx:
        a, b = grid[i], grid[i + 1]
        sa, sb = vals[i], vals[i + 1]
        while b - a > tol * max(1.0, abs(a)):
            m = 0.5 * (a + b)
            sm = post.global_minimize(theta, m)
            if abs(sm - sa) < abs(sm - sb):
                a, sa = m, sm
            else:
                b, sb = m, sm
        out.append(0.5 * (a + b))
    return out


def _panels(a, b, panel_order):
    n = max(1, int(np.ceil(b - a)))
    x, w = np.polynomial.legendre.leggauss(panel_order)
    edges = np.linspace(a, b, n + 1)
    half = np.diff(edges)[:, None] / 2
    mid = (edges[:-1] + edges[1:])[:, None] / 2
    return (mid + half * x).ravel(), (half * w).ravel()


def quadrature_expectation_of_optimizer(kind, grid=None):
    """Reference value of ``E[S(theta, eps)]`` with ``theta ~ N(0, sigma^2)``, ``eps ~ N(0, v)``.

    Args:
        kind: ``"J1"``, ``"J2"``, ``"linear"`` or an :class:`AnalyticalPosterior`.
        grid: :class:`QuadratureSpec`.
    """
    post = get_posterior(kind)
    spec = grid or QuadratureSpec()
    xt, wt = _gauss_hermite(spec.order)
    thetas = post.noise_sigma * xt
    if spec.method == "gauss-hermite":
        T, E = np.meshgrid(thetas, np.sqrt(post.prior_var) * xt, indexing="ij")
        S = post.global_minimize(T.ravel(), E.ravel())
        return float(S @ np.outer(wt, wt).ravel())

    lo, hi = BRACKET
    scan = np.linspace(lo, hi, spec.scan_points)
    total = 0.0
    for th, w in zip(thetas, wt):
        s_scan = post.global_minimize(th, scan)
        cuts = [lo] + _jumps(post, th, scan, s_scan) + [hi]
        pieces = [_panels(a, b, spec.panel_order) for a, b in zip(cuts[:-1], cuts[1:])]
        x = np.concatenate([p[0] for p in pieces])
        v = np.concatenate([p[1] for p in pieces])
        phi = np.exp(-0.5 * x**2 / post.prior_var) / np.sqrt(2 * np.pi * post.prior_var)
        total += w * float(post.global_minimize(th, x) @ (v * phi))
    return total


def linear_map_point(post):
    """MAP point of a posterior with ``power == 1`` (closed form)."""
    if post.power != 1:
        raise ValueError("closed-form MAP only for the linear forward map")
    a = 1.0 / post.prior_var + 1.0 / post.noise_sigma**2
    return (post.prior_mean / post.prior_var + post.data / post.noise_sigma**2) / a
