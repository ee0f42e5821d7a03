import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.errors import InvalidGeometry, MissingTag, StitchFailure
from perfhom.geometry import (
    CELL_FACES,
    GAMMA,
    MIN_ANGLE_DEG,
    SIGMA,
    CellGeometry,
    TriMesh,
    build_cell_mesh,
    mesh_quality_report,
    min_angles,
    read_mesh,
    sigma_length,
    tile_perforated_mesh,
    unique_edges,
    write_mesh,
    write_vtk,
)

Y_S = 1 - np.pi / 16


def assert_valid_cell(mesh):
    assert (mesh.areas() > 0).all()
    _, counts = unique_edges(mesh.triangles)
    assert counts.max() <= 2
    assert min_angles(mesh.vertices, mesh.triangles).min() >= MIN_ANGLE_DEG
    v = mesh.vertices
    for a, b in mesh.periodic_pairs:
        d = v[b] - v[a]
        assert tuple(d) in {(1.0, 0.0), (0.0, 1.0)}


def test_no_hole_l3_structured():
    mesh = build_cell_mesh(CellGeometry(hole_radius=0.0, refinement=3))
    assert mesh.nt == 128
    assert mesh.nv == 81
    assert len(mesh.edge_groups[SIGMA]) == 0
    assert mesh_quality_report(mesh).euler_characteristic == 1


def test_hole_perimeter_and_area(cell4):
    assert sigma_length(cell4) == pytest.approx(np.pi / 2, rel=0.02)
    assert cell4.areas().sum() == pytest.approx(Y_S, rel=0.02)
    assert mesh_quality_report(cell4).euler_characteristic == 0


def test_sigma_vertices_on_circle(cell4):
    nodes = cell4.tag_nodes(SIGMA)
    r = np.hypot(*(cell4.vertices[nodes] - 0.5).T)
    assert np.abs(r - 0.25).max() <= 1e-12


def test_sigma_is_one_loop(cell4):
    e = cell4.edges(SIGMA)
    _, deg = np.unique(e.ravel(), return_counts=True)
    assert (deg == 2).all()
    assert len(e) == len(np.unique(e.ravel()))


def test_face_nodes_dyadic(cell4):
    n = 16
    v = cell4.vertices
    face = (v == 0).any(1) | (v == 1).any(1)
    assert np.array_equal(np.rint(v[face] * n), v[face] * n)


def test_periodic_pair_count(cell4):
    # bijection: left/right nodes j = 0..n, bottom/top nodes i = 0..n-1
    assert len(cell4.periodic_pairs) == 2 * 16 + 1
    assert_valid_cell(cell4)


def test_h_max_bound():
    for L in (4, 5, 6):
        for r in (0.0, 0.2, 0.25):
            mesh = build_cell_mesh(CellGeometry((0.5, 0.5), r, L))
            assert mesh.h_max <= np.sqrt(2) * 2.0**-L * (1 + 1e-12)


def test_refinement_halves_h_max():
    hs = [build_cell_mesh(CellGeometry(hole_radius=0.0, refinement=L)).h_max for L in (3, 4, 5)]
    assert hs[0] / hs[1] == pytest.approx(2.0, abs=1e-12)
    assert hs[1] / hs[2] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize(
    "geom",
    [
        CellGeometry((0.5, 0.5), 0.45, 4),
        CellGeometry((0.5, 0.5), 0.39, 3),
        CellGeometry((0.2, 0.5), 0.15, 4),
        CellGeometry((0.5, 0.5), -0.1, 4),
        CellGeometry((0.5, 0.5), 0.2, 1),
    ],
)
def test_invalid_geometry(geom):
    with pytest.raises(InvalidGeometry):
        build_cell_mesh(geom)


@settings(max_examples=15, deadline=None)
@given(
    cx=st.floats(0.4, 0.6),
    cy=st.floats(0.4, 0.6),
    r=st.floats(0.1, 0.25),
    L=st.integers(3, 5),
)
def test_random_holes_satisfy_invariants(cx, cy, r, L):
    geom = CellGeometry((cx, cy), r, L)
    try:
        geom.validate()
    except InvalidGeometry:
        return
    if r < 2 * geom.h:
        return
    mesh = build_cell_mesh(geom)
    assert_valid_cell(mesh)
    nodes = mesh.tag_nodes(SIGMA)
    dist = np.hypot(mesh.vertices[nodes, 0] - cx, mesh.vertices[nodes, 1] - cy)
    assert np.abs(dist - r).max() <= 1e-12
    assert mesh.h_max <= np.sqrt(2) * geom.h * (1 + 1e-12)
    assert mesh_quality_report(mesh).euler_characteristic == 0


def test_tile_one_copy(cell4):
    t = tile_perforated_mesh(cell4, 1)
    assert (t.nv, t.nt) == (cell4.nv, cell4.nt)
    faces = np.concatenate([cell4.edge_groups[f] for f in CELL_FACES])
    a = {tuple(sorted(e)) for e in faces}
    b = {tuple(sorted(e)) for e in t.edges(GAMMA)}
    assert a == b
    assert len(t.periodic_pairs) == 0


def test_tile_four(cell4):
    t = tile_perforated_mesh(cell4, 4)
    assert t.nt == 16 * cell4.nt
    assert t.areas().sum() == pytest.approx(Y_S, rel=0.02)
    assert t.areas().sum() == pytest.approx(cell4.areas().sum(), abs=1e-12)
    _, counts = unique_edges(t.triangles)
    assert counts.max() == 2
    assert len(t.edges(SIGMA)) == 16 * len(cell4.edges(SIGMA))
    assert mesh_quality_report(t).euler_characteristic == 1 - 16


def test_tile_no_hole_is_structured(plain3):
    t = tile_perforated_mesh(plain3, 2)
    ref = build_cell_mesh(CellGeometry(hole_radius=0.0, refinement=4))
    assert (t.nv, t.nt) == (ref.nv, ref.nt)
    assert t.h_max == pytest.approx(np.sqrt(2) / 16, abs=1e-15)
    assert t.areas().sum() == pytest.approx(1.0, abs=1e-12)


def test_tile_cell_triangle_map(cell4):
    t = tile_perforated_mesh(cell4, 3)
    scaled = cell4.areas()[t.cell_triangle] / 9
    assert np.allclose(t.areas(), scaled, rtol=1e-10, atol=0)


def test_stitch_failure_on_off_grid_face(cell4):
    v = cell4.vertices.copy()
    k = np.flatnonzero((v[:, 0] == 0) & (v[:, 1] > 0) & (v[:, 1] < 1))[0]
    v[k, 1] += 1e-3
    bad = TriMesh(v, cell4.triangles, cell4.edge_groups, cell4.periodic_pairs, cell4.geometry)
    with pytest.raises(StitchFailure):
        tile_perforated_mesh(bad, 2)


def test_missing_tag(plain3):
    with pytest.raises(MissingTag):
        plain3.edges("NOPE")


def test_mesh_roundtrip(tmp_path, cell4):
    path = tmp_path / "m.txt"
    write_mesh(cell4, path)
    assert path.read_text().startswith(f"tri-mesh v1 {cell4.nv} {cell4.nt}\n")
    back = read_mesh(path)
    assert np.array_equal(back.vertices, cell4.vertices)
    assert np.array_equal(back.triangles, cell4.triangles)
    for tag, edges in cell4.edge_groups.items():
        assert np.array_equal(back.edge_groups[tag], edges)
    write_vtk(cell4, tmp_path / "m.vtk", {"x": cell4.vertices[:, 0]})
    assert "POINT_DATA" in (tmp_path / "m.vtk").read_text()


def test_deterministic_build():
    a = build_cell_mesh(CellGeometry((0.47, 0.53), 0.22, 4))
    b = build_cell_mesh(CellGeometry((0.47, 0.53), 0.22, 4))
    assert a.uid == b.uid
