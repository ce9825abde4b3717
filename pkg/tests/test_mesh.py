"""Mesh construction, refinement and conformity audits."""

import numpy as np
import pytest

from qlmpa import mesh as mesh_mod
from qlmpa.mesh import (audit_mesh, build_mesh, interpolate_to_refined,
                        read_mesh_text, refine_adaptive, refine_uniform,
                        signed_areas, write_mesh_text)


def test_build_minimal():
    m = build_mesh(1.0, 1)
    assert m.n_nodes == 4
    assert m.n_triangles == 2
    assert m.boundary_mask.all()
    audit_mesh(m)


def test_build_counts():
    m = build_mesh(10.0, 64)
    assert m.n_nodes == 65 ** 2 == 4225
    assert m.n_triangles == 2 * 64 ** 2 == 8192
    assert int(m.boundary_mask.sum()) == 4 * 64
    audit_mesh(m)


def test_build_area_partition():
    m = build_mesh(1.0, 2)
    assert signed_areas(m.nodes, m.triangles).sum() == pytest.approx(1.0, abs=1e-15)


def test_build_validation():
    with pytest.raises(ValueError):
        build_mesh(1.0, 0)
    with pytest.raises(ValueError):
        build_mesh(-2.0, 4)
    with pytest.raises(ValueError):
        build_mesh(0.0, 4)


def test_refine_uniform_counts():
    m = refine_uniform(build_mesh(1.0, 1))
    assert m.n_nodes == 9      # 4 nodes + 5 edges
    assert m.n_triangles == 8
    audit_mesh(m)
    m2 = refine_uniform(m)
    assert m2.n_triangles == 32
    audit_mesh(m2)
    assert signed_areas(m2.nodes, m2.triangles).sum() == pytest.approx(1.0, abs=1e-14)


def test_refine_uniform_affine_exact():
    """P1 transfer reproduces affine functions exactly."""
    m = build_mesh(2.0, 3)
    fine = refine_uniform(m)
    affine = lambda nodes: 1.5 * nodes[:, 0] - 0.25 * nodes[:, 1] + 0.75
    transferred = interpolate_to_refined(affine(m.nodes), fine)
    assert np.allclose(transferred, affine(fine.nodes), rtol=0, atol=1e-13)


def test_adaptive_nothing_marked():
    m = build_mesh(1.0, 2)
    out = refine_adaptive(m, np.zeros(m.n_triangles), 0.0)
    assert out is m


def test_adaptive_all_marked():
    m = build_mesh(1.0, 2)
    out = refine_adaptive(m, np.ones(m.n_triangles), 1.0)
    assert out.n_triangles >= 2 * m.n_triangles
    audit_mesh(out)


def test_adaptive_single_mark_conforming():
    m = build_mesh(1.0, 2)
    ind = np.zeros(m.n_triangles)
    ind[3] = 1.0
    out = refine_adaptive(m, ind, 1.0 / m.n_triangles)
    audit_mesh(out)   # edge-incidence audit: no hanging nodes
    assert out.n_triangles > m.n_triangles


def test_adaptive_old_nodes_persist():
    m = build_mesh(3.0, 4)
    rng = np.random.default_rng(7)
    cur = m
    for _ in range(4):
        ind = rng.random(cur.n_triangles)
        nxt = refine_adaptive(cur, ind, 0.3)
        audit_mesh(nxt)
        assert np.array_equal(nxt.nodes[:cur.n_nodes], cur.nodes)
        cur = nxt
    assert np.all(np.abs(cur.nodes) <= 1.5 + 1e-12)


def test_adaptive_validation():
    m = build_mesh(1.0, 2)
    with pytest.raises(ValueError):
        refine_adaptive(m, np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        refine_adaptive(m, np.zeros(m.n_triangles), 1.5)
    with pytest.raises(ValueError):
        refine_adaptive(m, -np.ones(m.n_triangles), 0.5)


def test_boundary_flags_after_refinement():
    m = refine_uniform(build_mesh(1.0, 1))
    # the cell-center node (diagonal midpoint) must be interior
    center = np.flatnonzero((m.nodes[:, 0] == 0.0) & (m.nodes[:, 1] == 0.0))
    assert len(center) == 1
    assert not m.boundary_mask[center[0]]
    # edge midpoints on the sides are boundary
    side = np.flatnonzero((m.nodes[:, 0] == 0.5) & (m.nodes[:, 1] == 0.0))
    assert m.boundary_mask[side[0]]


def test_orientation_positive_everywhere():
    rng = np.random.default_rng(3)
    m = build_mesh(1.0, 5)
    for _ in range(3):
        m = refine_adaptive(m, rng.random(m.n_triangles), 0.25)
    assert np.all(signed_areas(m.nodes, m.triangles) > 0)


def test_mesh_dump_round_trip(tmp_path):
    m = refine_uniform(build_mesh(2.5, 3))
    path = tmp_path / "mesh.txt"
    write_mesh_text(m, path)
    back = read_mesh_text(path)
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_mask, m.boundary_mask)
    assert back.R == m.R
    first = path.read_text().splitlines()[1].split()
    assert len(first) == 3   # "x y boundary_flag"


def test_mesh_immutable():
    m = build_mesh(1.0, 2)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 99.0


def test_audit_catches_hanging_node():
    m = build_mesh(1.0, 2)
    # bisect one triangle without closure: creates a hanging node
    tri = m.triangles
    t = tri[0]
    mid = 0.5 * (m.nodes[t[1]] + m.nodes[t[2]])
    nodes = np.vstack([m.nodes, mid])
    k = len(nodes) - 1
    broken = np.vstack([tri[1:], [[k, t[2], t[0]]], [[k, t[0], t[1]]]])
    bad = mesh_mod.Mesh(nodes, broken, mesh_mod._boundary_mask(nodes, 1.0), 1.0)
    with pytest.raises(mesh_mod.MeshError):
        audit_mesh(bad)
