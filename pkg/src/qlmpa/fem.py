"""P1 finite elements on triangulations of the square.

Gradients of P1 functions are constant per triangle, so stiffness entries
and H1 seminorms are exact.  Nonlinear integrands use the three edge
midpoints with weight |T|/3, a rule that is exact for quadratic
polynomials.  Dirichlet conditions are imposed by eliminating boundary
rows and columns, which keeps the operator symmetric positive definite on
the interior nodes.
"""

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, signed_areas


class FemError(Exception):
    """Assembly, quadrature or linear-solve failure."""


@dataclass(eq=False)
class FeFunction:
    """Nodal coefficients of a P1 function over a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("coefficient vector does not match the node count")

    def copy(self):
        return FeFunction(self.mesh, self.values.copy())


def require_conforming(v: FeFunction):
    """Check the exact zero trace of an H1_0 candidate."""
    if np.any(v.values[v.mesh.boundary_mask] != 0.0):
        raise ValueError("function has nonzero boundary values")


class _Geometry:
    """Per-mesh arrays shared by assembly, quadrature and energies."""

    def __init__(self, msh: Mesh):
        tri = msh.triangles
        p0, p1, p2 = (msh.nodes[tri[:, k]] for k in range(3))
        area = signed_areas(msh.nodes, tri)
        if np.any(area <= 1e-14 * area.mean()):
            raise FemError("degenerate triangle (zero area)")
        self.tri = tri
        self.area = area
        inv2a = 0.5 / area
        # grad phi_k, rotated edge vectors over 2|T|
        self.gx = np.column_stack([(p1[:, 1] - p2[:, 1]) * inv2a,
                                   (p2[:, 1] - p0[:, 1]) * inv2a,
                                   (p0[:, 1] - p1[:, 1]) * inv2a])
        self.gy = np.column_stack([(p2[:, 0] - p1[:, 0]) * inv2a,
                                   (p0[:, 0] - p2[:, 0]) * inv2a,
                                   (p1[:, 0] - p0[:, 0]) * inv2a])
        # edge midpoints in local edge order (0,1), (1,2), (2,0)
        self.qpoints = np.stack([0.5 * (p0 + p1), 0.5 * (p1 + p2), 0.5 * (p2 + p0)],
                                axis=1)
        self.qweights = np.repeat(area / 3.0, 3)
        self.free = np.flatnonzero(~msh.boundary_mask)
        self.n_nodes = msh.n_nodes


_geom_cache: "weakref.WeakKeyDictionary[Mesh, _Geometry]" = weakref.WeakKeyDictionary()


def geometry(msh: Mesh) -> _Geometry:
    geo = _geom_cache.get(msh)
    if geo is None:
        geo = _Geometry(msh)
        _geom_cache[msh] = geo
    return geo


def midpoint_values(geo: _Geometry, values):
    """P1 values at the three edge midpoints of every triangle, (nt, 3)."""
    v = values[geo.tri]
    return 0.5 * np.stack([v[:, 0] + v[:, 1], v[:, 1] + v[:, 2], v[:, 2] + v[:, 0]],
                          axis=1)


def element_gradients(geo: _Geometry, values):
    v = values[geo.tri]
    return (v * geo.gx).sum(axis=1), (v * geo.gy).sum(axis=1)


def grad_sq_form(geo: _Geometry, values):
    """int |grad v|^2, exact for P1."""
    dx, dy = element_gradients(geo, values)
    return float(geo.area @ (dx * dx + dy * dy))


@dataclass(eq=False)
class SparseOperator:
    """SPD stiffness restricted to interior nodes, with a cached factorization."""

    matrix: sp.csc_matrix
    free: np.ndarray
    mesh: Mesh
    coefficient: float

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    def __post_init__(self):
        self._factor = None

    def apply(self, x_free):
        return self.matrix @ x_free

    def solve_free(self, rhs_free):
        """Solve op x = rhs on the interior nodes to 1e-10 relative residual."""
        rhs_norm = np.linalg.norm(rhs_free)
        if rhs_norm == 0.0:
            return np.zeros_like(rhs_free)
        try:
            if self._factor is None:
                self._factor = spla.splu(self.matrix)
            x = self._factor.solve(rhs_free)
        except (RuntimeError, MemoryError):
            x = self._solve_cg(rhs_free)
        res = np.linalg.norm(self.matrix @ x - rhs_free) / rhs_norm
        if res > 1e-10:
            x = self._solve_cg(rhs_free, x0=x)
            res = np.linalg.norm(self.matrix @ x - rhs_free) / rhs_norm
            if res > 1e-10:
                raise FemError(f"linear solve did not converge, residual {res:.3e}")
        return x

    def _solve_cg(self, rhs, x0=None):
        jacobi = sp.diags(1.0 / self.matrix.diagonal())
        x, info = spla.cg(self.matrix, rhs, x0=x0, rtol=1e-12, atol=0.0,
                          M=jacobi, maxiter=10 * self.matrix.shape[0])
        if info != 0:
            raise FemError(f"conjugate gradients failed (info={info}); "
                           "operator may not be SPD")
        return x


def assemble_stiffness(msh: Mesh, coefficient=1.0) -> SparseOperator:
    """Stiffness matrix coefficient * int grad(phi_i) . grad(phi_j), interior nodes."""
    if coefficient <= 0:
        raise ValueError(f"coefficient must be positive, got {coefficient}")
    geo = geometry(msh)
    nt = geo.tri.shape[0]
    loc = np.empty((nt, 3, 3))
    for i in range(3):
        for j in range(3):
            loc[:, i, j] = coefficient * geo.area * (geo.gx[:, i] * geo.gx[:, j]
                                                     + geo.gy[:, i] * geo.gy[:, j])
    rows = np.repeat(geo.tri, 3, axis=1).ravel()
    cols = np.tile(geo.tri, (1, 3)).ravel()
    full = sp.coo_matrix((loc.ravel(), (rows, cols)),
                         shape=(geo.n_nodes, geo.n_nodes)).tocsr()
    mat = full[geo.free][:, geo.free].tocsc()
    mat = (mat + mat.T) * 0.5
    return SparseOperator(mat, geo.free, msh, float(coefficient))


def assemble_weighted_mass(msh: Mesh, wq):
    """Matrix int w phi_i phi_j with w given at the edge midpoints, (nt, 3).

    Uses the same degree-2 midpoint rule as the load vector; returns the
    full (all-nodes) sparse matrix.
    """
    geo = geometry(msh)
    w01, w12, w20 = wq[:, 0], wq[:, 1], wq[:, 2]
    s = geo.area / 12.0
    loc = np.empty((geo.tri.shape[0], 3, 3))
    loc[:, 0, 0] = s * (w01 + w20)
    loc[:, 1, 1] = s * (w01 + w12)
    loc[:, 2, 2] = s * (w12 + w20)
    loc[:, 0, 1] = loc[:, 1, 0] = s * w01
    loc[:, 1, 2] = loc[:, 2, 1] = s * w12
    loc[:, 0, 2] = loc[:, 2, 0] = s * w20
    rows = np.repeat(geo.tri, 3, axis=1).ravel()
    cols = np.tile(geo.tri, (1, 3)).ravel()
    return sp.coo_matrix((loc.ravel(), (rows, cols)),
                         shape=(geo.n_nodes, geo.n_nodes)).tocsr()


def load_from_midpoints(msh: Mesh, fq):
    """Nodal load vector int f phi_i from integrand values at edge midpoints."""
    geo = geometry(msh)
    s = geo.area / 6.0
    tri = geo.tri
    idx = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 1], tri[:, 2], tri[:, 2], tri[:, 0]])
    val = np.concatenate([s * fq[:, 0], s * fq[:, 0], s * fq[:, 1], s * fq[:, 1],
                          s * fq[:, 2], s * fq[:, 2]])
    return np.bincount(idx, weights=val, minlength=geo.n_nodes)


def integrate(msh: Mesh, integrand, funcs=()):
    """Integrate integrand(x, *values) over the mesh with the midpoint rule.

    integrand receives the quadrature points as an (m, 2) array and, for
    each FeFunction in funcs, its values at those points; it must return an
    (m,) array.  Exact for quadratic polynomials in the coordinates.
    """
    geo = geometry(msh)
    pts = geo.qpoints.reshape(-1, 2)
    vals = [midpoint_values(geo, f.values).ravel() for f in funcs]
    out = np.asarray(integrand(pts, *vals), dtype=np.float64)
    if out.shape != (pts.shape[0],):
        raise ValueError("integrand must return one value per quadrature point")
    bad = ~np.isfinite(out)
    if bad.any():
        t = int(np.flatnonzero(bad)[0]) // 3
        raise FemError(f"non-finite integrand value in triangle {t}")
    return float(geo.qweights @ out)


def solve_dirichlet(op: SparseOperator, rhs_free) -> FeFunction:
    """Solve op x = rhs (rhs over interior nodes) with zero boundary values."""
    x = np.zeros(op.n_nodes)
    x[op.free] = op.solve_free(np.asarray(rhs_free, dtype=np.float64))
    return FeFunction(op.mesh, x)


def norms(v: FeFunction):
    """(|grad v|_L2, |v|_L2, max |v|): seminorm exact, L2 by quadrature."""
    geo = geometry(v.mesh)
    grad = np.sqrt(grad_sq_form(geo, v.values))
    vq = midpoint_values(geo, v.values).ravel()
    l2 = np.sqrt(float(geo.qweights @ (vq * vq)))
    return grad, l2, float(np.abs(v.values).max()) if v.values.size else 0.0
