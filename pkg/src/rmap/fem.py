"""Simplicial meshes and linear Lagrange (P1) finite element assembly.

Meshes are plain node/cell arrays. The text format read and written here is::

    # rmap-mesh v1
    dim 2
    nodes 4
    0.0 0.0
    ...
    cells 2
    0 1 2
    ...
    facets 4
    left 0 2
    ...

``facets`` lists tagged boundary facets (points in 1D, edges in 2D) and may be
empty.  Indices are zero based.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp

MESH_FORMAT_VERSION = 1


@dataclass
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    facets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim == 1:
            self.nodes = self.nodes[:, None]
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.facets = {k: np.asarray(v, dtype=np.int64).reshape(len(v), -1) for k, v in self.facets.items()}
        if self.cells.shape[1] != self.dim + 1:
            raise ValueError(f"cells must have {self.dim + 1} vertices for a {self.dim}D simplicial mesh")
        if self.cells.min() < 0 or self.cells.max() >= self.num_nodes:
            raise ValueError("cell connectivity references a missing node")

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    def nearest_node(self, point):
        d = np.linalg.norm(self.nodes - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(d))

    def boundary_nodes(self, tag):
        return np.unique(self.facets[tag])


def interval_mesh(n, a=0.0, b=1.0):
    """Uniform mesh of ``[a, b]`` with ``n`` cells."""
    x = np.linspace(a, b, n + 1)[:, None]
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x, cells, {"left": [[0]], "right": [[n]]})


def rectangle_mesh(nx, ny, lx=1.0, ly=1.0):
    """Structured triangulation of ``[0, lx] x [0, ly]``, two triangles per cell."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    facets = {
        "bottom": [(idx(i, 0), idx(i + 1, 0)) for i in range(nx)],
        "top": [(idx(i, ny), idx(i + 1, ny)) for i in range(nx)],
        "left": [(idx(0, j), idx(0, j + 1)) for j in range(ny)],
        "right": [(idx(nx, j), idx(nx, j + 1)) for j in range(ny)],
    }
    return Mesh(nodes, np.array(cells), facets)


def write_mesh(mesh, path):
    lines = [f"# rmap-mesh v{MESH_FORMAT_VERSION}", f"dim {mesh.dim}", f"nodes {mesh.num_nodes}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.nodes]
    lines.append(f"cells {mesh.num_cells}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.cells]
    nf = sum(len(v) for v in mesh.facets.values())
    lines.append(f"facets {nf}")
    for tag, rows in mesh.facets.items():
        lines += [tag + " " + " ".join(str(int(i)) for i in row) for row in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    header = raw[0]
    if not header.startswith("# rmap-mesh v"):
        raise ValueError(f"{path}: not an rmap mesh file")
    if int(header.rsplit("v", 1)[1]) != MESH_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported mesh format {header}")
    body = [ln for ln in raw[1:] if ln and not ln.startswith("#")]
    pos = 0

    def section(name):
        nonlocal pos
        key, count = body[pos].split()
        if key != name:
            raise ValueError(f"{path}: expected section '{name}', found '{key}'")
        pos += 1
        rows = body[pos : pos + int(count)]
        pos += int(count)
        return rows

    dim = int(body[pos].split()[1])
    pos += 1
    nodes = np.array([[float(v) for v in r.split()] for r in section("nodes")]).reshape(-1, dim)
    cells = np.array([[int(v) for v in r.split()] for r in section("cells")])
    facets = {}
    for r in section("facets"):
        tag, *ids = r.split()
        facets.setdefault(tag, []).append([int(i) for i in ids])
    return Mesh(nodes, cells, facets)


class P1Space:
    """Linear Lagrange space on a simplicial mesh with vectorized assembly."""

    def __init__(self, mesh):
        self.mesh = mesh
        d = mesh.dim
        coords = mesh.nodes[mesh.cells]  # (m, d+1, d)
        X = np.concatenate([np.ones(coords.shape[:2] + (1,)), coords], axis=2)
        det = np.linalg.det(X)
        if np.any(np.abs(det) < 1e-300):
            raise ValueError("degenerate cell in mesh")
        self.volumes = np.abs(det) / factorial(d)
        # rows 1..d of inv(X) are the barycentric gradients
        self.grads = np.linalg.inv(X)[:, 1:, :].transpose(0, 2, 1)  # (m, d+1, d)
        nloc = d + 1
        ref = np.empty((nloc, nloc, nloc))
        for a in range(nloc):
            for b in range(nloc):
                for c in range(nloc):
                    mult = np.bincount([a, b, c], minlength=nloc)
                    ref[a, b, c] = np.prod([factorial(k) for k in mult])
        self._tri_ref = ref * factorial(d) / factorial(d + 3)
        self._mass_ref = (np.ones((nloc, nloc)) + np.eye(nloc)) / ((d + 1) * (d + 2))
        cells = mesh.cells
        self._rows = np.repeat(cells, nloc, axis=1).ravel()
        self._cols = np.tile(cells, (1, nloc)).ravel()

    @property
    def dim(self):
        return self.mesh.num_nodes

    def _assemble(self, local):
        n = self.dim
        return sp.csr_matrix((local.ravel(), (self._rows, self._cols)), shape=(n, n))

    def mass(self, lumped=False):
        local = self.volumes[:, None, None] * self._mass_ref[None]
        M = self._assemble(local)
        if lumped:
            return sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
        return M

    def stiffness(self):
        local = self.volumes[:, None, None] * np.einsum("mad,mbd->mab", self.grads, self.grads)
        return self._assemble(local)

    def weighted_mass(self, coeff):
        """Matrix of ``int coeff * phi_i * phi_j`` for a nodal P1 coefficient."""
        c = np.asarray(coeff)[self.mesh.cells]
        local = self.volumes[:, None, None] * np.einsum("mk,abk->mab", c, self._tri_ref)
        return self._assemble(local)

    def contract(self, a, b):
        """Vector ``k -> int a * b * phi_k`` for nodal P1 fields ``a`` and ``b``."""
        cells = self.mesh.cells
        loc = self.volumes[:, None] * np.einsum("ma,mb,abk->mk", a[cells], b[cells], self._tri_ref)
        return np.bincount(cells.ravel(), weights=loc.ravel(), minlength=self.dim)

    def boundary_load(self, tag, flux=1.0):
        """Load vector of ``int_{Gamma_tag} g phi_i ds`` for nodal flux ``g``."""
        facets = self.mesh.facets[tag]
        nodes = self.mesh.nodes
        f = np.zeros(self.dim)
        g = np.broadcast_to(np.asarray(flux, dtype=float), (self.dim,)) if np.ndim(flux) == 0 else np.asarray(flux)
        if facets.shape[1] == 1:
            np.add.at(f, facets[:, 0], g[facets[:, 0]])
            return f
        if facets.shape[1] != 2:
            raise NotImplementedError("boundary loads are implemented for 1D and 2D meshes")
        length = np.linalg.norm(nodes[facets[:, 1]] - nodes[facets[:, 0]], axis=1)
        ga, gb = g[facets[:, 0]], g[facets[:, 1]]
        np.add.at(f, facets[:, 0], length * (2 * ga + gb) / 6)
        np.add.at(f, facets[:, 1], length * (ga + 2 * gb) / 6)
        return f
