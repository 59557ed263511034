"""Mesh kernel: structured generators, refinement, stars/patches, inscribed
balls, boundary-subsimplex condition, shape metrics and text serialization."""

import math

import numpy as np
import pytest

from orliczfem import mesh as msh


def euler_characteristic(m):
    return m.num_vertices - m.edge_count + m.num_cells


def test_structured_counts():
    m = msh.structured_rect(2, 2, pattern="criss_cross")
    assert m.num_vertices == 3 * 3 + 2 * 2 == 13
    assert m.num_cells == 16
    assert m.boundary_faces.shape[0] == 8
    d = msh.structured_rect(2, 2, pattern="diagonal")
    assert d.num_vertices == 9
    assert d.num_cells == 8
    assert d.boundary_faces.shape[0] == 8


def test_positive_orientation_and_euler():
    for pattern in ("criss_cross", "diagonal"):
        m = msh.structured_rect(3, 2, box=(0.0, -1.0, 2.0, 1.0), pattern=pattern)
        a = m.vertices[m.cells[:, 0]]
        b = m.vertices[m.cells[:, 1]]
        c = m.vertices[m.cells[:, 2]]
        sa = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        assert np.all(sa > 0)
        assert euler_characteristic(m) == 1


def test_constructor_rejects_nonconforming():
    # edge shared by three cells
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 1.0]])
    cells = np.array([[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 1, 2]])
    with pytest.raises(msh.MeshFormatError):
        msh.SimplicialMesh(v, cells)
    # boundary faces not matching the once-counted edges
    with pytest.raises(msh.MeshFormatError):
        msh.SimplicialMesh(
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            np.array([[0, 1, 2]]),
            boundary_faces=np.array([[0, 1]]),
        )


def test_refine_uniform_counts_and_h():
    m = msh.structured_rect(2, 2, pattern="criss_cross")
    r = msh.refine_uniform(m)
    assert r.num_cells == 4 * m.num_cells
    hm = msh.shape_metrics(m)
    hr = msh.shape_metrics(r)
    assert hr["h_max"] == pytest.approx(hm["h_max"] / 2, rel=1e-15)
    assert hr["sigma_max"] == pytest.approx(hm["sigma_max"], rel=1e-12)
    assert euler_characteristic(r) == 1
    assert r.refined_from["parent"] is m
    # midpoints land between their recorded endpoints
    e = r.refined_from["edge"]
    mids = r.vertices[m.num_vertices :]
    assert np.allclose(mids, 0.5 * (m.vertices[e[:, 0]] + m.vertices[e[:, 1]]))


def test_patch_of_element_matches_bruteforce():
    m = msh.refine_uniform(msh.structured_rect(3, 3, pattern="criss_cross"))
    rng = np.random.default_rng(5)
    for c in rng.integers(0, m.num_cells, size=12):
        got = msh.patch_of_element(m, int(c))
        verts = set(int(v) for v in m.cells[c])
        brute = sorted(
            k for k in range(m.num_cells) if verts & set(int(v) for v in m.cells[k])
        )
        assert list(got) == brute
        assert int(c) in got


def test_patch_diameter_comparable_to_cell_diameter():
    m = msh.structured_rect(4, 4, pattern="criss_cross")
    for _ in range(3):
        metrics = msh.shape_metrics(m)
        for c in range(0, m.num_cells, 7):
            patch = msh.patch_of_element(m, c)
            pts = m.vertices[np.unique(m.cells[patch].ravel())]
            diam = np.max(
                np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            )
            assert diam <= 8.0 * metrics["h"][c]
        m = msh.refine_uniform(m)


def test_inscribed_ball_against_dense_sampling():
    m = msh.refine_uniform(msh.structured_rect(2, 2, pattern="criss_cross"))
    rng = np.random.default_rng(9)
    interior = m.interior_vertices
    for v in rng.choice(interior, size=min(8, interior.size), replace=False):
        star = msh.inscribed_ball(m, int(v))
        p = m.vertices[v]
        # independent route: sample each opposite edge densely
        dmin = np.inf
        for c in star.cells:
            others = [w for w in m.cells[c] if w != v]
            a, b = m.vertices[others[0]], m.vertices[others[1]]
            ts = np.linspace(0.0, 1.0, 20001)[:, None]
            seg = a + ts * (b - a)
            dmin = min(dmin, float(np.min(np.linalg.norm(seg - p, axis=1))))
        assert star.radius == pytest.approx(dmin, rel=1e-7)
        assert star.radius > 0


def test_inscribed_ball_rejects_boundary_vertex():
    m = msh.structured_rect(2, 2, pattern="criss_cross")
    with pytest.raises(ValueError):
        msh.inscribed_ball(m, 0)


def test_boundary_condition_check():
    counts, ok = msh.boundary_condition_check(msh.structured_rect(4, 4, pattern="criss_cross"))
    assert ok and counts.max() <= 1
    counts, ok = msh.boundary_condition_check(msh.structured_rect(1, 1, pattern="diagonal"))
    assert not ok and counts.max() == 2


def test_shape_metrics_closed_forms():
    # both patterns have sigma = 1 + sqrt(2) on square subrectangles
    for pattern in ("criss_cross", "diagonal"):
        m = msh.structured_rect(3, 3, pattern=pattern)
        s = msh.shape_metrics(m)
        assert s["sigma_max"] == pytest.approx(1.0 + math.sqrt(2.0), rel=1e-12)
        assert np.all(s["sigma"] > 1.0)
    m = msh.structured_rect(4, 4, pattern="criss_cross")
    assert msh.shape_metrics(m)["h_max"] == pytest.approx(0.25, rel=1e-15)
    assert msh.shape_metrics(m)["area"].sum() == pytest.approx(1.0, rel=1e-14)


def test_text_roundtrip_byte_identical():
    m = msh.structured_rect(3, 2, box=(0.0, 0.0, 1.0, 1.0 / 3.0), pattern="criss_cross")
    text = msh.write_mesh_text(m)
    m2 = msh.read_mesh_text(text)
    assert msh.write_mesh_text(m2) == text
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.cells, m2.cells)
    assert np.array_equal(m.boundary_faces, m2.boundary_faces)


def test_text_format_errors():
    with pytest.raises(msh.MeshFormatError):
        msh.read_mesh_text("")
    with pytest.raises(msh.MeshFormatError):
        msh.read_mesh_text("3 1 0 0\n0.0 0.0 0.0\n")
    with pytest.raises(msh.MeshFormatError):
        msh.read_mesh_text("2 3 1 3\n0.0 0.0\n1.0 0.0\n0.0 1.0\n0 1 5\n0 1\n1 2\n2 0\n")


def test_boundary_loops_single_cycle():
    m = msh.structured_rect(3, 3, pattern="criss_cross")
    loops = msh.boundary_loops(m)
    assert len(loops) == 1
    assert sorted(loops[0]) == sorted(m.boundary_vertices.tolist())


def test_cells_around_vertex_sorted_ascending():
    m = msh.refine_uniform(msh.structured_rect(2, 2, pattern="criss_cross"))
    for v in range(m.num_vertices):
        around = m.cells_around_vertex(v)
        assert np.all(np.diff(around) > 0)
        for c in around:
            assert v in m.cells[c]
