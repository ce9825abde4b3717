"""Conforming triangulations of the square (-R/2, R/2)^2.

The base grid splits n x n square cells along the lower-left to
upper-right diagonal.  Every triangle is stored as (peak, b1, b2) where
(b1, b2) is its refinement edge; on these meshes that edge is always the
hypotenuse, so newest-vertex bisection keeps all triangles right isosceles
and the convention survives both refinement routines.  Meshes are
treated as immutable once built.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    """A mesh failed validation or an audit."""


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray           # (nn, 2) float64
    triangles: np.ndarray       # (nt, 3) int64, CCW, refinement edge = columns 1:3
    boundary_mask: np.ndarray   # (nn,) bool
    R: float
    # edges of the parent mesh whose midpoints were appended by refinement,
    # in appended-node order; used for nodal transfer of P1 functions
    parent_edges: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary_mask):
            arr.setflags(write=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def _boundary_mask(nodes, R):
    tol = 1e-12 * R
    on = np.abs(np.abs(nodes) - R / 2.0) <= tol
    return on[:, 0] | on[:, 1]


def signed_areas(nodes, triangles):
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def build_mesh(R, n):
    """Structured grid of n x n cells on (-R/2, R/2)^2, two triangles per cell."""
    if R <= 0:
        raise ValueError(f"side length R must be positive, got {R}")
    if n < 1 or int(n) != n:
        raise ValueError(f"cells per side must be a positive integer, got {n}")
    n = int(n)
    coords = np.linspace(-R / 2.0, R / 2.0, n + 1)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ll = (iy * (n + 1) + ix).ravel()
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    # peak at the right angle, refinement edge on the diagonal ll-ur
    lower = np.column_stack([lr, ur, ll])
    upper = np.column_stack([ul, ll, ur])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    return Mesh(nodes, triangles, _boundary_mask(nodes, R), float(R))


def _unique_edges(triangles, local):
    """Unique sorted node pairs for the given local edge list.

    Returns (edges, ids) with ids[t, k] the row in edges of local edge k of
    triangle t.
    """
    pairs = triangles[:, local].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    return edges, inv.reshape(triangles.shape[0], len(local))


def refine_uniform(mesh):
    """Split every triangle into 4 congruent children via edge midpoints."""
    tri = mesh.triangles
    edges, eid = _unique_edges(tri, [[0, 1], [1, 2], [2, 0]])
    nn = mesh.n_nodes
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])

    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    m0 = nn + eid[:, 0]   # mid(a, b)
    m1 = nn + eid[:, 1]   # mid(b, c)
    m2 = nn + eid[:, 2]   # mid(c, a)
    children = np.empty((4 * tri.shape[0], 3), dtype=np.int64)
    children[0::4] = np.column_stack([a, m0, m2])
    children[1::4] = np.column_stack([m0, b, m1])
    children[2::4] = np.column_stack([m2, m1, c])
    children[3::4] = np.column_stack([m1, m2, m0])

    return Mesh(nodes, children, _boundary_mask(nodes, mesh.R), mesh.R,
                parent_edges=edges)


def refine_adaptive(mesh, indicator, fraction):
    """Bisect the ceil(fraction * nt) triangles of largest indicator.

    Newest-vertex bisection with conforming closure: whenever any edge of a
    triangle is marked, its refinement edge is marked too, so every marked
    edge ends up bisected from both sides.
    """
    indicator = np.asarray(indicator, dtype=np.float64)
    if indicator.shape != (mesh.n_triangles,):
        raise ValueError("indicator length must equal the triangle count")
    if np.any(indicator < 0):
        raise ValueError("indicator must be nonnegative")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")

    k = math.ceil(fraction * mesh.n_triangles)
    if k == 0:
        return mesh
    order = np.argsort(-indicator, kind="stable")
    marked_tris = order[:k]

    tri = mesh.triangles
    # local edge 0 is the refinement edge (t1, t2)
    edges, eid = _unique_edges(tri, [[1, 2], [2, 0], [0, 1]])
    marked = np.zeros(edges.shape[0], dtype=bool)
    marked[eid[marked_tris, 0]] = True

    while True:
        has_marked = marked[eid].any(axis=1)
        need = has_marked & ~marked[eid[:, 0]]
        if not need.any():
            break
        marked[eid[need, 0]] = True

    nn = mesh.n_nodes
    new_of_edge = np.full(edges.shape[0], -1, dtype=np.int64)
    new_of_edge[marked] = nn + np.arange(int(marked.sum()))
    mids = 0.5 * (mesh.nodes[edges[marked, 0]] + mesh.nodes[edges[marked, 1]])
    nodes = np.vstack([mesh.nodes, mids])

    ref_m = marked[eid[:, 0]]
    e2_m = marked[eid[:, 1]]
    e3_m = marked[eid[:, 2]]
    if np.any((e2_m | e3_m) & ~ref_m):
        raise MeshError("closure failed: side marked without refinement edge")

    t0, t1, t2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m = new_of_edge[eid[:, 0]]
    m2 = new_of_edge[eid[:, 1]]
    m3 = new_of_edge[eid[:, 2]]

    parts = []   # (parent index, child slot, child nodes)

    def emit(sel, slot, cols):
        if sel.any():
            parts.append((np.flatnonzero(sel), slot,
                          np.column_stack([c[sel] for c in cols])))

    keep = ~ref_m
    emit(keep, 0, (t0, t1, t2))
    # first bisection: children (m, t2, t0) and (m, t0, t1)
    emit(ref_m & ~e2_m, 0, (m, t2, t0))
    emit(ref_m & e2_m, 0, (m2, t0, m))
    emit(ref_m & e2_m, 1, (m2, m, t2))
    emit(ref_m & ~e3_m, 2, (m, t0, t1))
    emit(ref_m & e3_m, 2, (m3, t1, m))
    emit(ref_m & e3_m, 3, (m3, m, t0))

    parent = np.concatenate([p for p, _, _ in parts])
    slot = np.concatenate([np.full(len(p), s) for p, s, _ in parts])
    tris = np.vstack([t for _, _, t in parts])
    order = np.argsort(parent * 4 + slot, kind="stable")
    children = tris[order]

    return Mesh(nodes, children, _boundary_mask(nodes, mesh.R), mesh.R,
                parent_edges=edges[marked])


def interpolate_to_refined(values, fine_mesh):
    """Transfer nodal P1 values from a mesh to its direct refinement."""
    if fine_mesh.parent_edges is None:
        raise ValueError("mesh does not record a refinement parent")
    pe = fine_mesh.parent_edges
    n_old = fine_mesh.n_nodes - pe.shape[0]
    if values.shape != (n_old,):
        raise ValueError("values do not match the parent node count")
    return np.concatenate([values, 0.5 * (values[pe[:, 0]] + values[pe[:, 1]])])


def audit_mesh(mesh):
    """Validate orientation, conformity, boundary flags and total area.

    Raises MeshError on the first violation.  Interior edges must be shared
    by exactly two triangles and boundary edges by exactly one.
    """
    areas = signed_areas(mesh.nodes, mesh.triangles)
    if np.any(areas <= 0):
        raise MeshError("triangle with nonpositive signed area")

    R = mesh.R
    if np.any(np.abs(mesh.nodes) > R / 2.0 + 1e-12 * R):
        raise MeshError("node outside the domain")
    expect = _boundary_mask(mesh.nodes, R)
    if not np.array_equal(expect, mesh.boundary_mask):
        raise MeshError("boundary flags inconsistent with node coordinates")

    if abs(areas.sum() - R * R) > 1e-12 * R * R:
        raise MeshError(f"triangle areas sum to {areas.sum()}, expected {R * R}")

    edges, eid = _unique_edges(mesh.triangles, [[0, 1], [1, 2], [2, 0]])
    counts = np.bincount(eid.ravel(), minlength=edges.shape[0])
    if counts.max() > 2:
        raise MeshError("edge shared by more than two triangles")
    single = counts == 1
    ends = mesh.nodes[edges[single]]
    tol = 1e-12 * R
    same_side = np.zeros(single.sum(), dtype=bool)
    for dim in (0, 1):
        for side in (-R / 2.0, R / 2.0):
            on = (np.abs(ends[:, :, dim] - side) <= tol).all(axis=1)
            same_side |= on
    if not same_side.all():
        raise MeshError("hanging node: interior edge with a single triangle")


def write_mesh_text(mesh, path):
    """Plain-text dump: count header, then 'x y flag' and 'i j k' lines."""
    with open(path, "w") as fh:
        fh.write(f"# {mesh.n_nodes} {mesh.n_triangles} {mesh.R:.17g}\n")
        for (x, y), b in zip(mesh.nodes, mesh.boundary_mask):
            fh.write(f"{x:.17g} {y:.17g} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh_text(path):
    with open(path) as fh:
        header = fh.readline().split()
        nn, nt, R = int(header[1]), int(header[2]), float(header[3])
        nodes = np.empty((nn, 2))
        flags = np.empty(nn, dtype=bool)
        for i in range(nn):
            x, y, b = fh.readline().split()
            nodes[i] = (float(x), float(y))
            flags[i] = bool(int(b))
        tris = np.empty((nt, 3), dtype=np.int64)
        for t in range(nt):
            tris[t] = [int(w) for w in fh.readline().split()]
    return Mesh(nodes, tris, flags, R)
