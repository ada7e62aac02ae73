"""Gaussian priors ``N(u0, alpha^-1 (I - Laplace)^-s)`` discretized by P1 finite elements.

Fractional powers are realized through the generalized eigenpairs of
``(K + M, M)`` (matrix transfer technique): with ``V^T M V = I`` the covariance
is ``C = alpha^-1 V diag(sigma^-s) V^T M``, self-adjoint in the mass-weighted
inner product ``<a, b>_M = a^T M b``.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from rmap.fem import P1Space


class GaussianMeasure:
    """Gaussian measure on ``R^N`` with the ``M``-weighted inner product.

    The covariance is stored spectrally: ``C = V diag(cov_eigs) V^T M`` where
    the columns of ``V`` are ``M``-orthonormal.  ``mass=None`` means the
    Euclidean inner product.
    """

    def __init__(self, mean, eigvecs, cov_eigs, mass=None, alpha=None, s=None, stiffness=None):
        self.mean = np.asarray(mean, dtype=float).copy()
        self.V = np.asarray(eigvecs, dtype=float)
        self.cov_eigs = np.asarray(cov_eigs, dtype=float)
        if np.any(self.cov_eigs <= 0):
            raise ValueError("covariance eigenvalues must be positive")
        self.mass = mass
        self.alpha = alpha
        self.s = s
        self.stiffness = stiffness
        self._sqrt = np.sqrt(self.cov_eigs)
        self.mean.setflags(write=False)

    @classmethod
    def from_covariance(cls, mean, cov):
        """Measure with a dense Euclidean covariance matrix."""
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        w, V = np.linalg.eigh(cov)
        return cls(np.atleast_1d(mean), V, w)

    @property
    def dim(self):
        return self.mean.size

    @property
    def rank(self):
        return self.cov_eigs.size

    # inner products -------------------------------------------------------
    def apply_mass(self, v):
        return v if self.mass is None else self.mass @ v

    def inner(self, a, b):
        return float(a @ self.apply_mass(b))

    def norm(self, v):
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def mass_solve(self, v):
        """``M^-1 v``; exact when the full spectrum is retained (``M^-1 = V V^T``)."""
        if self.mass is None:
            return v
        return self.V @ (self.V.T @ v)

    # covariance actions ---------------------------------------------------
    def coefficients(self, v):
        """KL coefficients ``V^T M v``."""
        return self.V.T @ self.apply_mass(v)

    def apply_c(self, v):
        return self.V @ (self.cov_eigs * self.coefficients(v))

    def apply_cinv(self, v):
        return self.V @ (self.coefficients(v) / self.cov_eigs)

    def apply_csqrt(self, v):
        return self.V @ (self._sqrt * self.coefficients(v))

    def whiten(self, v):
        """Coordinates ``w`` with ``|w|^2 = <v, C^-1 v>_M``."""
        return self.coefficients(v) / self._sqrt

    def cinv_norm_sq(self, v):
        w = self.whiten(v)
        return float(w @ w)

    def covariance_matrix(self):
        """Euclidean covariance of the coefficient vector, ``V diag(c) V^T``."""
        return (self.V * self.cov_eigs) @ self.V.T

    def precision_matrix(self):
        """Euclidean Hessian of ``1/2 |u - u0|_C^2``, i.e. ``M C^-1``."""
        MV = self.V if self.mass is None else self.mass @ self.V
        return (MV / self.cov_eigs) @ MV.T

    # sampling -------------------------------------------------------------
    def perturbation(self, normals):
        """Zero-mean draw ``V diag(sqrt(c)) a`` from standard normals ``a``."""
        return self.V @ (self._sqrt * np.asarray(normals))

    def sample(self, rng):
        return self.mean + self.perturbation(rng.standard_normal(self.rank))

    def neg_log_density(self, u):
        """``1/2 <u - u0, C^-1 (u - u0)>_M`` (normalizing constant omitted)."""
        return 0.5 * self.cinv_norm_sq(np.asarray(u) - self.mean)

    def with_mean(self, mean):
        return GaussianMeasure(mean, self.V, self.cov_eigs, self.mass, self.alpha, self.s, self.stiffness)


def build_prior(mesh, u0, alpha, s, lumped=False, truncation=None):
    """Discretize ``N(u0, alpha^-1 (I - Laplace)^-s)`` with Neumann conditions on ``mesh``.

    Args:
        mesh: simplicial mesh.
        u0: nodal prior mean (scalar broadcasts to a constant field).
        alpha: positive scaling.
        s: exponent, must exceed half the spatial dimension.
        lumped: use the row-sum lumped mass matrix.
        truncation: keep only the leading ``truncation`` KL modes.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if s <= mesh.dim / 2:
        raise ValueError(f"s must exceed d/2 = {mesh.dim / 2} for a well-defined prior")
    space = P1Space(mesh)
    M = space.mass(lumped=lumped)
    K = space.stiffness()
    Md = M.toarray()
    try:
        np.linalg.cholesky(Md)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is not symmetric positive definite") from exc
    sigma, V = sla.eigh(K.toarray() + Md, Md)
    if truncation is not None:
        sigma, V = sigma[:truncation], V[:, :truncation]
    cov_eigs = sigma ** (-s) / alpha
    mean = np.broadcast_to(np.asarray(u0, dtype=float), (mesh.num_nodes,)).copy()
    return GaussianMeasure(mean, V, cov_eigs, mass=sp.csr_matrix(M), alpha=alpha, s=s, stiffness=K)
