import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barelycoupled.mesh import (AnnulusSpec, MeshError, build_edges_and_neighbors, generate_annulus,
                                generate_rectangle, locate_point, locate_points, sector_groups,
                                shape_functions)
from barelycoupled.mesh import _brute_force


@pytest.fixture(scope="module")
def gap_mesh():
    return generate_annulus(AnnulusSpec(2.0, 2.1, 4, 64))


def check_invariants(mesh):
    assert np.all(mesh.areas > 0)
    nb = mesh.element_neighbors
    for e in range(mesh.n_elements):
        for other in nb[e]:
            if other >= 0:
                assert e in nb[other]
    # every facet: boundary facets once, interior twice
    n_boundary = int(np.sum(nb < 0))
    assert n_boundary == len(mesh.boundary_facets)
    keys = {tuple(sorted(edge)) for edge in mesh.edges.tolist()}
    assert len(keys) == len(mesh.edges)
    # Euler: E_edges = 3T/2 + B/2 for a triangulation
    assert len(mesh.edges) == (3 * mesh.n_elements + len(mesh.boundary_facets)) // 2


# -- generate_annulus ----------------------------------------------------------------

def test_annulus_counts_follow_construction_formula():
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 2, 8))
    assert mesh.n_nodes == 24
    assert mesh.n_elements == 32
    check_invariants(mesh)


def test_annulus_radii_match_gap():
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 2, 16))
    r = np.hypot(*mesh.node_coords.T)
    assert r.min() == pytest.approx(2.0)
    assert r.max() == pytest.approx(2.1)
    assert np.allclose(np.hypot(*mesh.node_coords[mesh.nodes_with_tag("inner")].T), 2.0)
    assert np.allclose(np.hypot(*mesh.node_coords[mesh.nodes_with_tag("outer")].T), 2.1)


def test_annulus_rejects_two_azimuthal_divisions():
    with pytest.raises(MeshError, match="n_azimuthal"):
        generate_annulus(AnnulusSpec(2.0, 2.1, 2, 2))


@pytest.mark.parametrize("spec", [AnnulusSpec(0.0, 1.0, 1, 8), AnnulusSpec(2.0, 1.0, 1, 8),
                                  AnnulusSpec(1.0, 2.0, 0, 8)])
def test_annulus_invalid_specs(spec):
    with pytest.raises(MeshError):
        generate_annulus(spec)


def test_slit_annulus_has_cut_boundaries():
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 3, 16, slit=True))
    assert mesh.n_nodes == 4 * 17
    assert len(mesh.facets_with_tag("inflow")) == 3
    assert len(mesh.facets_with_tag("outflow")) == 3
    check_invariants(mesh)
    # both cut lines coincide geometrically but are distinct nodes
    a = mesh.node_coords[mesh.nodes_with_tag("inflow")]
    b = mesh.node_coords[mesh.nodes_with_tag("outflow")]
    assert np.array_equal(a[np.lexsort(a.T)], b[np.lexsort(b.T)])
    assert set(mesh.nodes_with_tag("inflow")).isdisjoint(mesh.nodes_with_tag("outflow"))


@pytest.mark.parametrize("n_az", [64, 128, 256])
def test_annulus_area_converges(n_az):
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 4, n_az))
    exact = np.pi * (2.1 ** 2 - 2.0 ** 2)
    err = abs(mesh.areas.sum() - exact) / exact
    assert err < 0.005
    # polygon deficit is (2 pi / n)^2 / 6 to leading order
    assert err == pytest.approx((2 * np.pi / n_az) ** 2 / 6, rel=0.01)


def test_outward_normals_on_annulus(gap_mesh):
    inner = gap_mesh.facets_with_tag("inner")
    mid = gap_mesh.node_coords[gap_mesh.boundary_facets[inner]].mean(axis=1)
    radial = mid / np.hypot(*mid.T)[:, None]
    assert np.all(np.einsum("ij,ij->i", gap_mesh.facet_normals[inner], radial) < -0.99)
    outer = gap_mesh.facets_with_tag("outer")
    mid = gap_mesh.node_coords[gap_mesh.boundary_facets[outer]].mean(axis=1)
    radial = mid / np.hypot(*mid.T)[:, None]
    assert np.all(np.einsum("ij,ij->i", gap_mesh.facet_normals[outer], radial) > 0.99)


def test_mesh_arrays_are_read_only(gap_mesh):
    with pytest.raises(ValueError):
        gap_mesh.node_coords[0, 0] = 1.0


# -- build_edges_and_neighbors ---------------------------------------------------------

def test_single_triangle_connectivity():
    mesh = build_edges_and_neighbors([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert len(mesh.edges) == 3
    assert len(mesh.boundary_facets) == 3
    assert np.all(mesh.element_neighbors == -1)


def test_two_triangles_share_an_edge():
    mesh = build_edges_and_neighbors([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    assert len(mesh.edges) == 5
    assert len(mesh.boundary_facets) == 4
    assert 1 in mesh.element_neighbors[0]
    assert 0 in mesh.element_neighbors[1]


def test_three_triangles_on_one_edge_is_non_manifold():
    coords = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.6, 2]]
    with pytest.raises(MeshError, match="non-manifold"):
        build_edges_and_neighbors(coords, [[0, 1, 2], [0, 3, 1], [0, 1, 4]])


def test_clockwise_input_is_reoriented():
    mesh = build_edges_and_neighbors([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    assert mesh.areas[0] == pytest.approx(0.5)


def test_degenerate_element_rejected():
    with pytest.raises(MeshError, match="degenerate"):
        build_edges_and_neighbors([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_rectangle_tags_and_area():
    mesh = generate_rectangle(2.0, 1.0, 8, 4)
    assert mesh.areas.sum() == pytest.approx(2.0)
    assert set(mesh.tags) == {"bottom", "right", "top", "left"}
    assert len(mesh.facets_with_tag("left")) == 4
    check_invariants(mesh)


# -- shape functions --------------------------------------------------------------

def test_shape_functions_at_barycenter(gap_mesh):
    e = 17
    w = shape_functions(gap_mesh, e, gap_mesh.centroids[e])
    assert np.allclose(w, 1.0 / 3.0, atol=1e-12)


def test_shape_functions_at_vertex(gap_mesh):
    e = 5
    w = shape_functions(gap_mesh, e, gap_mesh.node_coords[gap_mesh.elements[e, 0]])
    assert np.allclose(w, [1.0, 0.0, 0.0], atol=1e-12)


def test_shape_functions_outside_have_negative_component(gap_mesh):
    w = shape_functions(gap_mesh, 0, (10.0, 10.0))
    assert w.min() < 0
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_partition_of_unity_random_points(gap_mesh):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2.2, 2.2, size=(1000, 2))
    elems = rng.integers(0, gap_mesh.n_elements, 1000)
    for e, p in zip(elems, pts):
        assert abs(shape_functions(gap_mesh, int(e), p).sum() - 1.0) < 1e-13


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 511), st.floats(0, 1), st.floats(0, 1))
def test_shape_functions_reproduce_linear_fields(element, s, t):
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 4, 64))
    a, b = (s, t) if s + t <= 1 else (1 - s, 1 - t)
    verts = mesh.node_coords[mesh.elements[element]]
    point = verts[0] + a * (verts[1] - verts[0]) + b * (verts[2] - verts[0])
    w = shape_functions(mesh, element, point)
    assert w.min() >= -1e-12
    assert np.allclose(w @ verts, point, atol=1e-13)


# -- point location ----------------------------------------------------------------

def test_locate_barycenter_returns_start(gap_mesh):
    assert locate_point(gap_mesh, 33, gap_mesh.centroids[33]) == 33


def test_locate_neighbor_in_one_hop():
    mesh = build_edges_and_neighbors([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    target = mesh.centroids[1]
    assert locate_point(mesh, 0, target) == 1
    assert shape_functions(mesh, 1, target).min() >= 0


def test_locate_outside_annulus_not_found(gap_mesh):
    assert locate_point(gap_mesh, 0, (0.0, 0.0)) is None
    assert locate_point(gap_mesh, 0, (5.0, 0.0)) is None
    assert locate_points(gap_mesh, [0, 0], [(0.0, 0.0), (5.0, 0.0)]).tolist() == [-1, -1]


def test_locate_matches_brute_force_random_points(gap_mesh):
    rng = np.random.default_rng(7)
    r = rng.uniform(2.0, 2.1, 1000)
    th = rng.uniform(0, 2 * np.pi, 1000)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    starts = rng.integers(0, gap_mesh.n_elements, 1000)
    found = locate_points(gap_mesh, starts, pts)
    for p, e, s in zip(pts, found, starts):
        # points in the chord sag lie outside the polygonal mesh
        expected = _brute_force(gap_mesh, p)
        assert e == (-1 if expected is None else expected)
        assert locate_point(gap_mesh, int(s), p) == expected


def test_shared_facet_point_goes_to_lowest_index(gap_mesh):
    e = 40
    k = int(np.argmax(gap_mesh.element_neighbors[e] >= 0))
    other = gap_mesh.element_neighbors[e, k]
    i, j = gap_mesh.elements[e, (k + 1) % 3], gap_mesh.elements[e, (k + 2) % 3]
    mid = 0.5 * (gap_mesh.node_coords[i] + gap_mesh.node_coords[j])
    expected = min(e, other)
    assert locate_point(gap_mesh, e, mid) == expected
    assert locate_point(gap_mesh, int(other), mid) == expected


def test_boundary_stop_blocks_crossing_a_slit():
    mesh = generate_annulus(AnnulusSpec(2.0, 2.1, 2, 16, slit=True))
    # element next to the outflow cut, point just across the cut (theta slightly > 0)
    out_facet = mesh.facets_with_tag("outflow")[0]
    start = mesh.facet_elements[out_facet]
    point = np.array([2.05 * np.cos(0.01), 2.05 * np.sin(0.01)])
    assert locate_points(mesh, [start], [point], boundary_stops=True)[0] == -1
    assert locate_points(mesh, [start], [point])[0] >= 0


def test_sector_groups_cover_every_node(gap_mesh):
    groups = sector_groups(gap_mesh, 16, 2)
    assert groups.shape == (gap_mesh.n_nodes,)
    assert set(np.unique(groups)) == set(range(groups.max() + 1))
    assert groups.max() + 1 == 32
