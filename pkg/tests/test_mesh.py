import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegbem.mesh import (BARYCENTER, EDGE_MIDPOINT, VERTEX, MeshError, MeshFormatError, TriangleMesh,
                         barycentric_refine, generate_icosphere, geodesic_sphere, mesh_io, mesh_stats,
                         perturbed_sphere, read_off, write_off)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_icosphere_counts(k):
    m = generate_icosphere(1.0, k)
    assert m.n_vertices == 10 * 4**k + 2
    assert m.n_cells == 20 * 4**k
    assert m.euler == 2
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_geodesic_counts_and_orientation(n):
    m = geodesic_sphere(0.5, n)
    assert m.n_vertices == 10 * n * n + 2
    assert m.n_cells == 20 * n * n
    assert m.euler == 2
    assert m.signed_volume > 0
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 0.5)


def test_geodesic_matches_icosphere_at_powers_of_two():
    a, b = geodesic_sphere(1.0, 2), generate_icosphere(1.0, 1)
    assert np.isclose(a.total_area, b.total_area, rtol=1e-12)


def test_outward_normals(sphere2):
    assert np.all(np.einsum("td,td->t", sphere2.normals, sphere2.centroids) > 0)


def test_sphere_area_converges():
    errs = [abs(generate_icosphere(1.0, k).total_area - 4 * np.pi) for k in (1, 2, 3)]
    assert errs[0] > errs[1] > errs[2]


def test_flipped_cell_rejected(sphere1):
    cells = sphere1.cells.copy()
    cells[0] = cells[0][::-1]
    with pytest.raises(MeshError):
        TriangleMesh(sphere1.vertices, cells)


def test_open_surface_rejected(sphere1):
    with pytest.raises(MeshError):
        TriangleMesh(sphere1.vertices, sphere1.cells[1:])


def test_degenerate_cell_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0.0]])
    with pytest.raises(MeshError):
        TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 1]]))


def test_index_out_of_range_rejected(sphere1):
    cells = sphere1.cells.copy()
    cells[0, 0] = sphere1.n_vertices
    with pytest.raises(MeshError):
        TriangleMesh(sphere1.vertices, cells)


def test_refinement_counts_and_noc(sphere2):
    r = barycentric_refine(sphere2)
    nv, ne, nc = sphere2.n_vertices, len(sphere2.edges), sphere2.n_cells
    assert r.mesh.n_cells == 6 * nc
    assert r.mesh.n_vertices == nv + ne + nc
    assert np.sum(r.vertex_kind == VERTEX) == nv
    assert np.sum(r.vertex_kind == EDGE_MIDPOINT) == ne
    assert np.sum(r.vertex_kind == BARYCENTER) == nc
    # the dual pyramids form a partition of unity on the refined vertices
    row_sums = np.asarray(r.dual_map.sum(axis=1)).ravel()
    assert np.allclose(row_sums, 1.0)
    assert r.noc[r.vertex_kind == BARYCENTER].sum() == nc


def test_refined_mesh_is_valid(sphere1):
    r = barycentric_refine(sphere1)
    TriangleMesh(r.mesh.vertices, r.mesh.cells)
    assert r.mesh.euler == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2), st.floats(0.0, 0.15), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_refinement_preserves_area(k, eps, coeffs):
    m = perturbed_sphere(1.3, k, eps, coeffs if any(coeffs) else None)
    r = barycentric_refine(m)
    child = np.bincount(r.parent_cell, weights=r.mesh.areas, minlength=m.n_cells)
    assert np.allclose(child, m.areas, rtol=1e-12, atol=0)
    assert abs(r.mesh.total_area - m.total_area) <= 1e-12 * m.total_area


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.15))
def test_perturbed_shells_stay_nested(eps):
    inner = perturbed_sphere(0.087, 1, eps)
    outer = perturbed_sphere(0.092, 1, eps)
    assert np.allclose(outer.winding_number(inner.vertices), 1.0, atol=1e-6)


def test_perturbation_range_enforced():
    with pytest.raises(ValueError):
        perturbed_sphere(1.0, 1, 0.2)


def test_winding_number_inside_outside(sphere2):
    w = sphere2.winding_number(np.array([[0, 0, 0.0], [0.3, -0.2, 0.1], [2.0, 0, 0]]))
    assert np.allclose(w, [1, 1, 0], atol=1e-9)


def test_distance(sphere2):
    d = sphere2.distance(np.zeros(3))
    assert 0.95 < d < 1.0


def test_off_round_trip(tmp_path, sphere1):
    p = tmp_path / "s.off"
    write_off(sphere1, p)
    m = read_off(p)
    assert np.array_equal(m.vertices, sphere1.vertices)
    assert np.array_equal(m.cells, sphere1.cells)
    assert mesh_io(p).n_cells == sphere1.n_cells


def test_off_errors_report_line(tmp_path):
    p = tmp_path / "bad.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(MeshFormatError):
        read_off(p)
    p.write_text("PLY\n")
    with pytest.raises(MeshFormatError):
        read_off(p)


def test_mesh_stats(sphere1):
    s = mesh_stats(sphere1)
    assert s.euler == 2 and s.n_edges == 120
    assert 0.5 < s.h < 0.7
