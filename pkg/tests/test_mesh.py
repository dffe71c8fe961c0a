import numpy as np
import pytest

from nschannel.mesh import (DIRICHLET, NEUMANN, MeshTaggingError,
                            build_channel_mesh, load_mesh_json, refine,
                            save_mesh_json, save_mesh_vtk)


def test_default_channel_has_four_right_angle_corners():
    m = build_channel_mesh(3.0, 1.0, 3, 1)
    assert m.corner_points.size == 4
    got = sorted(map(tuple, m.vertices[m.corner_points]))
    assert got == [(0.0, 0.0), (0.0, 1.0), (3.0, 0.0), (3.0, 1.0)]


def test_all_dirichlet_tagging_is_valid_with_no_corners():
    m = build_channel_mesh(1.0, 1.0, 2, 2,
                           gamma_spec={"left": DIRICHLET, "right": DIRICHLET})
    assert m.corner_points.size == 0
    assert np.all(m.boundary_tags == DIRICHLET)


def test_empty_dirichlet_set_rejected():
    with pytest.raises(MeshTaggingError):
        build_channel_mesh(1.0, 1.0, 2, 2, gamma_spec={
            "bottom": NEUMANN, "top": NEUMANN, "left": NEUMANN, "right": NEUMANN})


def test_tag_change_inside_straight_side_rejected():
    def tagger(x, y):
        if abs(y) < 1e-12:
            return DIRICHLET if x < 1.5 else NEUMANN  # flips mid-wall: 180 degrees
        return DIRICHLET if abs(y - 1.0) < 1e-12 else NEUMANN

    with pytest.raises(MeshTaggingError):
        build_channel_mesh(3.0, 1.0, 4, 2, gamma_spec=tagger)


def test_structured_counts_and_h():
    m = build_channel_mesh(3.0, 1.0, 48, 16)
    assert m.n_vertices == 49 * 17
    assert m.n_triangles == 2 * 48 * 16
    assert m.h == pytest.approx(np.hypot(3.0 / 48, 1.0 / 16), rel=1e-12)


def test_positive_areas_and_boundary_cover():
    m = build_channel_mesh(2.0, 1.0, 5, 3)
    assert np.all(m.triangle_areas() > 0)
    # tagged edges cover the whole topological boundary: every boundary vertex
    # of the rectangle appears, and edge count matches the perimeter cells
    assert m.boundary_edges.shape[0] == 2 * (5 + 3)
    for a, b in m.boundary_edges:
        for v in (a, b):
            x, y = m.vertices[v]
            assert min(abs(x), abs(x - 2.0), abs(y), abs(y - 1.0)) < 1e-14


def test_refine_splits_and_preserves():
    m = build_channel_mesh(3.0, 1.0, 3, 1)
    r = refine(m)
    assert r.n_triangles == 4 * m.n_triangles
    assert r.h == pytest.approx(m.h / 2)
    assert abs(r.triangle_areas().sum() - 3.0) < 1e-12 * 3.0
    rr = refine(r)
    assert rr.n_triangles == 16 * m.n_triangles
    # corner detection idempotent: same physical corner points
    for mm in (r, rr):
        got = sorted(map(tuple, mm.vertices[mm.corner_points]))
        assert got == sorted(map(tuple, m.vertices[m.corner_points]))
    # tags inherited, none lost
    assert r.boundary_edges.shape[0] == 2 * m.boundary_edges.shape[0]


def test_grading_shrinks_cells_toward_ends():
    m = build_channel_mesh(1.0, 1.0, 8, 8, grading=1.5)
    xs = np.unique(m.vertices[:, 0])
    gaps = np.diff(xs)
    assert gaps[0] < gaps[len(gaps) // 2]
    assert gaps[-1] < gaps[len(gaps) // 2]
    assert abs(m.triangle_areas().sum() - 1.0) < 1e-12


def test_json_roundtrip(tmp_path):
    m = build_channel_mesh(3.0, 1.0, 4, 2)
    p = tmp_path / "mesh.json"
    save_mesh_json(m, p)
    m2 = load_mesh_json(p)
    assert np.allclose(m2.vertices, m.vertices)
    assert np.array_equal(m2.triangles, m.triangles)
    assert list(m2.boundary_tags) == list(m.boundary_tags)
    assert np.array_equal(m2.corner_points, m.corner_points)


def test_vtk_export_is_readable_text(tmp_path):
    m = build_channel_mesh(1.0, 1.0, 2, 2)
    p = tmp_path / "mesh.vtk"
    save_mesh_vtk(m, p, point_data={"marker": np.arange(m.n_vertices, dtype=float)})
    text = p.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert f"POINTS {m.n_vertices} double" in text
    assert "CELL_TYPES" in text
    assert "SCALARS marker double 1" in text


def test_bad_dimensions_rejected():
    with pytest.raises(ValueError):
        build_channel_mesh(0.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        build_channel_mesh(1.0, 1.0, 0, 2)
    with pytest.raises(ValueError):
        build_channel_mesh(1.0, 1.0, 4, 4, grading=0.5)
