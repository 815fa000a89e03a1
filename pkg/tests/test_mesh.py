"""Mesh construction, file format, and geometry tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhoflow.errors import (
    DegenerateCellError,
    InvalidArgumentError,
    MeshFormatError,
    MeshTopologyError,
    OutOfDomainError,
)
from hhoflow.mesh import (
    build_cartesian_mesh,
    load_mesh,
    locate_cell,
    mesh_size,
    subtriangulate,
)


def test_cartesian_counts():
    mesh = build_cartesian_mesh(4, 4, (0.0, 0.0, 1000.0, 1000.0))
    assert mesh.n_cells == 16
    assert mesh.n_faces == 40
    mesh32 = build_cartesian_mesh(32, 32, (0.0, 0.0, 1000.0, 1000.0))
    assert mesh32.n_cells == 1024
    assert mesh32.n_faces == 2112


def test_mesh_size_16x16():
    mesh = build_cartesian_mesh(16, 16, (0.0, 0.0, 1000.0, 1000.0))
    assert mesh_size(mesh) == pytest.approx(15.625, rel=1e-13)


def test_cell_geometry_of_unit_square():
    mesh = build_cartesian_mesh(1, 1, (0.0, 0.0, 1.0, 1.0))
    cell = mesh.cells[0]
    assert cell.area == pytest.approx(1.0)
    np.testing.assert_allclose(cell.centroid, [0.5, 0.5])
    assert cell.diameter == pytest.approx(np.sqrt(2.0))


def test_face_normals_point_out_of_owner():
    mesh = build_cartesian_mesh(3, 2, (0.0, 0.0, 3.0, 2.0))
    for face in mesh.faces:
        owner = mesh.cells[face.cells[0]]
        outward = face.center - owner.centroid
        assert np.dot(outward, face.normal) > 0.0
        if face.cells[1] >= 0:
            assert face.cells[0] < face.cells[1]  # owner is the lower index
            neighbor = mesh.cells[face.cells[1]]
            assert np.dot(face.center - neighbor.centroid, face.normal) < 0.0


def test_divergence_free_geometry():
    mesh = build_cartesian_mesh(5, 4, (0.0, 0.0, 2.0, 1.0))
    for cell in mesh.cells:
        total = np.zeros(2)
        for fid in cell.face_ids:
            total += mesh.faces[fid].length * mesh.outward_normal(cell.id, fid)
        np.testing.assert_allclose(total, 0.0, atol=1e-12)


def test_subtriangulate_partitions_cell():
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    subs = subtriangulate(mesh, 3)
    assert len(subs) == 4
    assert {s.face_id for s in subs} == set(mesh.cells[3].face_ids)
    areas = []
    for s in subs:
        v = s.vertices
        a, b = v[1] - v[0], v[2] - v[0]
        areas.append(0.5 * (a[0] * b[1] - a[1] * b[0]))
    assert all(a > 0 for a in areas)
    assert sum(areas) == pytest.approx(mesh.cells[3].area, rel=1e-13)


def test_locate_cell_interior_and_tie_break():
    mesh = build_cartesian_mesh(4, 4, (0.0, 0.0, 4.0, 4.0))
    assert locate_cell(mesh, (2.5, 0.5)) == 2
    # the center vertex is shared by cells 5, 6, 9, 10: smallest wins
    assert locate_cell(mesh, (2.0, 2.0)) == 5
    # edge midpoint shared by cells 1 and 5
    assert locate_cell(mesh, (1.5, 1.0)) == 1
    with pytest.raises(OutOfDomainError):
        locate_cell(mesh, (-1.0, 2.0))


def test_locate_cell_corner_wells():
    mesh = build_cartesian_mesh(8, 8, (0.0, 0.0, 1000.0, 1000.0))
    assert locate_cell(mesh, (0.0, 0.0)) == 0
    assert locate_cell(mesh, (1000.0, 1000.0)) == 63


def roundtrip_write(mesh, path):
    # minimal writer used by format tests (the package writer lives in field_io)
    lines = ["polymesh2d 1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(v) for v in c.vertex_ids) for c in mesh.cells]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_mesh_roundtrip(tmp_path):
    mesh = build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 2.0))
    p = tmp_path / "grid.msh"
    roundtrip_write(mesh, p)
    loaded = load_mesh(p)
    assert loaded.n_cells == mesh.n_cells
    assert loaded.n_faces == mesh.n_faces
    np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
    for a, b in zip(loaded.cells, mesh.cells):
        assert a.vertex_ids == b.vertex_ids
        assert a.face_ids == b.face_ids


def test_load_mesh_format_errors(tmp_path):
    p = tmp_path / "bad.msh"
    p.write_text("wrongheader\n", encoding="utf-8")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(p)
    assert err.value.line_no == 1

    p.write_text("polymesh2d 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 1 oops\n", encoding="utf-8")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(p)
    assert err.value.line_no == 7

    p.write_text("polymesh2d 1\nvertices 2\n0 0\n1 0\ncells 1\n0 1\n", encoding="utf-8")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_load_mesh_topology_error(tmp_path):
    # three cells all claiming the edge (0, 1)
    p = tmp_path / "nonmanifold.msh"
    p.write_text(
        "polymesh2d 1\nvertices 5\n0 0\n1 0\n0.5 1\n0.5 -1\n2 0.5\n"
        "cells 3\n0 1 2\n1 0 3\n0 1 4\n",
        encoding="utf-8",
    )
    with pytest.raises(MeshTopologyError):
        load_mesh(p)


def test_load_mesh_clockwise_cell_is_degenerate(tmp_path):
    p = tmp_path / "cw.msh"
    p.write_text(
        "polymesh2d 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 2 1\n",
        encoding="utf-8",
    )
    with pytest.raises(DegenerateCellError):
        load_mesh(p)


def test_strongly_nonconvex_cell_rejected(tmp_path):
    # a chevron whose centroid lies outside: one sub-triangle flips sign
    p = tmp_path / "chevron.msh"
    p.write_text(
        "polymesh2d 1\nvertices 4\n0 0\n4 0\n2 3\n2 0.4\n"
        "cells 1\n0 1 2 3\n",
        encoding="utf-8",
    )
    with pytest.raises(DegenerateCellError):
        load_mesh(p)


def test_build_cartesian_validates_arguments():
    with pytest.raises(InvalidArgumentError):
        build_cartesian_mesh(0, 3, (0, 0, 1, 1))
    with pytest.raises(InvalidArgumentError):
        build_cartesian_mesh(2, 2, (0, 0, -1, 1))


@settings(max_examples=30, deadline=None)
@given(
    n_pts=st.integers(min_value=3, max_value=9),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_random_convex_polygon_invariants(n_pts, seed):
    from scipy.spatial import ConvexHull

    rng = np.random.default_rng(seed)
    cloud = rng.uniform(-1.0, 1.0, size=(n_pts + 6, 2))
    hull = ConvexHull(cloud)
    pts = cloud[hull.vertices]  # counterclockwise by construction
    edges = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    if hull.volume < 0.2 or np.min(np.hypot(edges[:, 0], edges[:, 1])) < 0.05:
        return  # skip slivers that the mesh builder rightly rejects
    n_pts = len(pts)
    lines = ["polymesh2d 1", f"vertices {n_pts}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in pts]
    lines += ["cells 1", " ".join(str(i) for i in range(n_pts))]
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "poly.msh"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        mesh = load_mesh(path)
    cell = mesh.cells[0]
    total = np.zeros(2)
    per_sub = 0.0
    for fid in cell.face_ids:
        total += mesh.faces[fid].length * mesh.outward_normal(0, fid)
    for s in subtriangulate(mesh, 0):
        v = s.vertices
        a, b = v[1] - v[0], v[2] - v[0]
        per_sub += 0.5 * (a[0] * b[1] - a[1] * b[0])
    np.testing.assert_allclose(total, 0.0, atol=1e-12 * cell.diameter)
    assert per_sub == pytest.approx(cell.area, rel=1e-12)
    assert locate_cell(mesh, cell.centroid) == 0
