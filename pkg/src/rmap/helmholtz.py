"""Neumann Helmholtz forward problem with log wave-number parameter.

State equation (weak form, P1 elements)::

    int grad w . grad phi - int exp(2u) w phi = int_{Gamma_src} g phi

discretized as ``A(u) w = f`` with ``A(u) = K - M(exp(2u))``.  Observations are
nodal values of ``w`` at nodes snapped to the requested points.  One sparse LU
factorization per parameter value serves the forward, adjoint and all
incremental solves at that value.

With ``E(z) v = sum_k 2 exp(2u_k) v_k M_k z`` (``M_k`` the mass matrix weighted
by the hat function of node ``k``):

* incremental forward: ``A dw = E(w) v``
* adjoint: ``A p = -P^T s`` for observation-space source ``s``; then
  ``dG^T s = -E(w)^T p``
* incremental adjoint: ``A dp = -weight P^T P dw + E(p) v`` (Gauss-Newton
  drops ``E(p) v``).
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from rmap.errors import SolverFailure
from rmap.fem import P1Space, read_mesh, rectangle_mesh, write_mesh
from rmap.prior import build_prior
from rmap.problem import ForwardModel, InverseProblem
from rmap.rng import STREAM_DATA, generator

log = logging.getLogger(__name__)

PIVOT_RATIO_TOL = 1e-13


def observation_grid(n=5, lo=0.1, hi=0.9):
    x = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(x, x, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


class HelmholtzModel(ForwardModel):
    """Parameter-to-observable map ``u -> P w(u)``.

    Args:
        mesh: 2D simplicial mesh.
        obs_points: ``(K, 2)`` observation locations, snapped to nearest nodes.
        source_tag: boundary tag carrying the Neumann flux.
        flux: flux value (scalar or nodal array).
    """

    def __init__(self, mesh, obs_points, source_tag="left", flux=1.0):
        super().__init__()
        self.mesh = mesh
        self.space = P1Space(mesh)
        self.K = self.space.stiffness().tocsr()
        self.load = self.space.boundary_load(source_tag, flux)
        pts = np.atleast_2d(np.asarray(obs_points, dtype=float))
        nodes = np.array([mesh.nearest_node(p) for p in pts], dtype=int)
        moved = np.linalg.norm(mesh.nodes[nodes] - pts, axis=1)
        if np.any(moved > 0):
            log.info("snapped %d observation points to nodes (max shift %.3g)", int(np.sum(moved > 0)), moved.max())
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("two observation points snapped to the same node; refine the mesh")
        self.obs_nodes = nodes
        self.n_params = mesh.num_nodes
        self.n_obs = len(nodes)

    # ------------------------------------------------------------ helpers
    def operator(self, u):
        return (self.K - self.space.weighted_mass(np.exp(2.0 * np.asarray(u)))).tocsc()

    def _factor(self, u):
        A = self.operator(u)
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverFailure(f"Helmholtz operator is singular: {exc}", u=np.array(u)) from exc
        piv = np.abs(lu.U.diagonal())
        ratio = piv.min() / piv.max()
        if not np.isfinite(ratio) or ratio < PIVOT_RATIO_TOL:
            raise SolverFailure(
                f"Helmholtz operator is numerically singular (smallest pivot {piv.min():.3e}, ratio {ratio:.3e})",
                u=np.array(u),
                pivot=float(piv.min()),
            )
        return A, lu

    def _E(self, state, z, v):
        """``E(z) v``."""
        return self.space.weighted_mass(2.0 * state["e2u"] * v) @ z

    def _ET(self, state, z, p):
        """``E(z)^T p``, component ``k`` is ``2 exp(2u_k) p^T M_k z``."""
        return 2.0 * state["e2u"] * self.space.contract(p, z)

    def _PT(self, s):
        out = np.zeros(self.n_params)
        np.add.at(out, self.obs_nodes, s)
        return out

    # ------------------------------------------------------------ interface
    def solve_state(self, u, load=None):
        u = np.array(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise SolverFailure("parameter is not finite", u=u)
        self.counter.forward += 1
        A, lu = self._factor(u)
        f = self.load if load is None else load
        w = lu.solve(f)
        return {"u": u, "e2u": np.exp(2.0 * u), "A": A, "lu": lu, "w": w}

    def observe(self, state):
        return state["w"][self.obs_nodes]

    def solve_adjoint(self, state, source):
        self.counter.adjoint += 1
        return state["lu"].solve(-self._PT(np.asarray(source, dtype=float)), trans="T")

    def adjoint_gradient(self, state, adj):
        return -self._ET(state, state["w"], adj)

    def incremental_state(self, state, v):
        self.counter.incremental_forward += 1
        return state["lu"].solve(self._E(state, state["w"], v))

    def jacobian_action(self, state, v):
        return self.incremental_state(state, v)[self.obs_nodes]

    def incremental_adjoint(self, state, adj, v, dw, weight, full=True):
        self.counter.incremental_adjoint += 1
        rhs = -weight * self._PT(dw[self.obs_nodes])
        if full:
            rhs = rhs + self._E(state, adj, v)
        return state["lu"].solve(rhs, trans="T")

    def misfit_hessian_action(self, state, adj, v, weight, full=True):
        v = np.asarray(v, dtype=float)
        w = state["w"]
        dw = self.incremental_state(state, v)
        dp = self.incremental_adjoint(state, adj, v, dw, weight, full)
        out = -self._ET(state, w, dp)
        if full:
            out = out - 2.0 * v * self._ET(state, w, adj) - self._ET(state, dw, adj)
        return out

    def second_order_action(self, state, source, v):
        p = self.solve_adjoint(state, source)
        dw = self.incremental_state(state, v)
        self.counter.incremental_adjoint += 1
        dp = state["lu"].solve(self._E(state, p, v), trans="T")
        return -2.0 * v * self._ET(state, state["w"], p) - self._ET(state, dw, p) - self._ET(state, state["w"], dp)


@dataclass
class HelmholtzCase:
    """Synthetic inverse problem instance."""

    model: HelmholtzModel
    prior: object
    truth: np.ndarray
    data: np.ndarray
    noise_sigma: float
    provenance: dict

    @property
    def problem(self):
        return InverseProblem(self.model, self.prior, self.data, self.noise_sigma)


def make_synthetic_case(
    nx=16,
    ny=None,
    alpha=8.0,
    noise_pct=1.0,
    seed=0,
    u0=0.5,
    s=2.0,
    obs_points=None,
    noise_mode="rms",
    source_tag="left",
    flux=1.0,
    max_redraws=20,
    lumped=False,
):
    """Draw a truth from the prior, solve, and add relative Gaussian noise.

    ``noise_mode="rms"`` sets ``sigma = noise_pct/100 * RMS(G(truth))``;
    ``"max"`` uses the maximum absolute observation instead.  With
    ``noise_pct = 0`` the data are noise free and ``sigma`` falls back to
    ``1e-2 * RMS`` so the problem stays well posed.
    """
    ny = nx if ny is None else ny
    mesh = rectangle_mesh(nx, ny)
    prior = build_prior(mesh, u0, alpha, s, lumped=lumped)
    pts = observation_grid() if obs_points is None else obs_points
    model = HelmholtzModel(mesh, pts, source_tag, flux)
    rng = generator(seed, STREAM_DATA)
    redraws = 0
    while True:
        truth = prior.sample(rng)
        try:
            clean = model.observe(model.solve_state(truth))
            break
        except SolverFailure:
            redraws += 1
            log.warning("forward solve failed at drawn truth; redrawing (%d)", redraws)
            if redraws > max_redraws:
                raise
    if noise_mode == "rms":
        scale = float(np.sqrt(np.mean(clean**2)))
    elif noise_mode == "max":
        scale = float(np.max(np.abs(clean)))
    else:
        raise ValueError(f"unknown noise mode {noise_mode!r}")
    noise = rng.standard_normal(clean.size)
    sigma = noise_pct / 100.0 * scale
    data = clean + sigma * noise
    if sigma == 0:
        sigma = 1e-2 * scale
    model.counter.forward = 0
    prov = {
        "seed": seed,
        "nx": nx,
        "ny": ny,
        "alpha": alpha,
        "s": s,
        "u0": u0,
        "noise_pct": noise_pct,
        "noise_mode": noise_mode,
        "noise_sigma": sigma,
        "redraws": redraws,
        "source_tag": source_tag,
        "flux": flux,
        "obs_nodes": model.obs_nodes.tolist(),
        "lumped": lumped,
    }
    return HelmholtzCase(model, prior, truth, data, sigma, prov)


def write_case(case, directory):
    """Bundle: ``mesh.txt``, ``truth.csv``, ``data.csv``, ``provenance.json``."""
    os.makedirs(directory, exist_ok=True)
    write_mesh(case.model.mesh, os.path.join(directory, "mesh.txt"))
    np.savetxt(os.path.join(directory, "truth.csv"), case.truth, fmt="%.17g", header="u", comments="")
    np.savetxt(os.path.join(directory, "data.csv"), case.data, fmt="%.17g", header="d", comments="")
    with open(os.path.join(directory, "provenance.json"), "w") as fh:
        json.dump(case.provenance, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_case(directory):
    with open(os.path.join(directory, "provenance.json")) as fh:
        prov = json.load(fh)
    mesh = read_mesh(os.path.join(directory, "mesh.txt"))
    truth = np.loadtxt(os.path.join(directory, "truth.csv"), skiprows=1)
    data = np.atleast_1d(np.loadtxt(os.path.join(directory, "data.csv"), skiprows=1))
    prior = build_prior(mesh, prov["u0"], prov["alpha"], prov["s"], lumped=prov.get("lumped", False))
    model = HelmholtzModel(mesh, mesh.nodes[prov["obs_nodes"]], prov["source_tag"], prov["flux"])
    return HelmholtzCase(model, prior, truth, data, prov["noise_sigma"], prov)
