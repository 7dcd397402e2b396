import numpy as np
import pytest

from dopinv.mesh import (
    DIRICHLET,
    GAMMA1,
    NEUMANN,
    GeometryConfig,
    build_unit_square,
)


@pytest.mark.parametrize("n", [2, 5, 8, 16])
def test_counts(n):
    mesh = build_unit_square(n)
    assert mesh.num_nodes == (n + 1) ** 2
    assert len(mesh.triangles) == 2 * n * n
    assert len(mesh.boundary_edges) == 4 * n


def test_triangle_geometry():
    mesh = build_unit_square(7)
    p = mesh.nodes
    t = mesh.triangles
    v1 = p[t[:, 1]] - p[t[:, 0]]
    v2 = p[t[:, 2]] - p[t[:, 0]]
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    # consistent counterclockwise orientation, uniform areas summing to 1
    assert np.all(cross > 0)
    areas = 0.5 * cross
    np.testing.assert_allclose(areas, 0.5 / 49, rtol=1e-12)
    np.testing.assert_allclose(areas.sum(), 1.0, rtol=1e-12)


def test_node_coordinates_cover_grid():
    n = 4
    mesh = build_unit_square(n)
    xs = np.unique(mesh.nodes[:, 0])
    np.testing.assert_allclose(xs, np.linspace(0, 1, n + 1), atol=1e-15)
    assert mesh.h == pytest.approx(0.25)


def test_boundary_tags_cover_contract_layout():
    mesh = build_unit_square(8)
    tags = set(mesh.boundary_tags)
    assert tags == {GAMMA1, DIRICHLET, NEUMANN}
    g1 = mesh.boundary_nodes(GAMMA1)
    assert np.all(mesh.nodes[g1, 1] == 1.0)
    assert np.all(mesh.nodes[g1, 0] <= 0.5 + 1e-12)
    bottom = mesh.boundary_nodes(DIRICHLET)
    assert np.all(mesh.nodes[bottom, 1] == 0.0)


def test_gamma1_nodes_sorted_by_x():
    mesh = build_unit_square(10)
    ids = mesh.gamma1_nodes()
    x = mesh.nodes[ids, 0]
    assert np.all(np.diff(x) > 0)
    # the measured contact covers half the top edge: 0 .. 0.5 inclusive
    assert x[0] == 0.0 and x[-1] == pytest.approx(0.5)


def test_neumann_nodes_exclude_dirichlet_touching():
    mesh = build_unit_square(8)
    neumann = set(mesh.boundary_nodes(NEUMANN))
    fixed = set(mesh.dirichlet_nodes())
    assert not neumann & fixed


def test_dirichlet_nodes_union_sorted():
    mesh = build_unit_square(6)
    ids = mesh.dirichlet_nodes()
    assert np.all(np.diff(ids) > 0)
    expected = set(mesh.boundary_nodes(GAMMA1)) | set(mesh.boundary_nodes(DIRICHLET))
    assert set(ids) == expected


def test_interior_mask_strip():
    mesh = build_unit_square(10)
    mask = mesh.interior_mask(0.1)
    inside = mesh.nodes[mask]
    assert np.all(inside[:, 0] > 0.1) and np.all(inside[:, 0] < 0.9)
    assert np.all(inside[:, 1] > 0.1) and np.all(inside[:, 1] < 0.9)
    # margin 0 keeps every strictly interior node
    assert mesh.interior_mask(0.0).sum() == 9 * 9


def test_interior_mask_degenerate_warns():
    # interior nodes of the n=3 mesh sit 1/3 from the boundary, so a
    # margin of 0.4 leaves nothing to update
    mesh = build_unit_square(3)
    with pytest.warns(UserWarning):
        mask = mesh.interior_mask(0.4)
    assert not mask.any()


def test_interior_mask_rejects_bad_margin():
    mesh = build_unit_square(4)
    with pytest.raises(ValueError):
        mesh.interior_mask(0.5)
    with pytest.raises(ValueError):
        mesh.interior_mask(-0.05)


def test_custom_geometry_snaps_to_grid():
    config = GeometryConfig(gamma1=(0.26, 0.74))
    mesh = build_unit_square(4, config)
    g1 = mesh.boundary_nodes(GAMMA1)
    x = np.sort(mesh.nodes[g1, 0])
    np.testing.assert_allclose(x, [0.25, 0.5, 0.75], atol=1e-15)


def test_collapsed_interval_rejected():
    config = GeometryConfig(gamma1=(0.3, 0.31))
    with pytest.raises(ValueError):
        build_unit_square(2, config)


def test_minimum_resolution():
    with pytest.raises(ValueError):
        build_unit_square(1)


def test_export_csv_roundtrip(tmp_path):
    mesh = build_unit_square(3)
    mesh.export_csv(tmp_path)
    nodes = np.genfromtxt(tmp_path / "nodes.csv", delimiter=",", names=True)
    tris = np.genfromtxt(tmp_path / "triangles.csv", delimiter=",",
                         names=True, dtype=int)
    np.testing.assert_array_equal(
        np.column_stack([nodes["x"], nodes["y"]]), mesh.nodes)
    assert len(tris) == len(mesh.triangles)
    with open(tmp_path / "boundary.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["n0", "n1", "tag"]
