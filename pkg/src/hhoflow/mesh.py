"""Polygonal meshes: construction, file format, geometry queries.

Cells are simple polygons given by counterclockwise vertex loops; cells may
be non-convex as long as every centroid sub-triangle (two face endpoints plus
the cell centroid) has positive area. Faces (edges) are derived from the cell
loops; each face stores the unit normal pointing out of its lower-indexed
adjacent cell.

Mesh file format (UTF-8, LF line endings)::

    polymesh2d 1
    vertices <N>
    <x> <y>            (N lines)
    cells <M>
    <v0> <v1> ... <vk>  (M lines, counterclockwise vertex indices)

Faces are not stored in the file; the loader derives them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCellError,
    InvalidArgumentError,
    MeshFormatError,
    MeshTopologyError,
    OutOfDomainError,
)

MESH_FORMAT_HEADER = "polymesh2d 1"


@dataclass(frozen=True)
class Cell:
    """One polygonal cell."""

    id: int
    vertex_ids: tuple
    face_ids: tuple
    centroid: np.ndarray
    area: float
    diameter: float


@dataclass(frozen=True)
class Face:
    """One straight edge, shared by at most two cells.

    ``vertex_ids`` are in the traversal order of the owner (the lower-indexed
    adjacent cell); ``normal`` points out of the owner. ``ref_point`` is the
    lexicographically smaller endpoint, used as the face-basis reference.
    """

    id: int
    vertex_ids: tuple
    cells: tuple  # (owner, neighbor or -1)
    center: np.ndarray
    length: float
    normal: np.ndarray
    ref_point: np.ndarray


@dataclass(frozen=True)
class SubTriangle:
    """Centroid sub-triangle of a cell, generated by one of its faces."""

    cell_id: int
    face_id: int
    vertices: np.ndarray  # (3, 2): face endpoints (cell traversal order), centroid


@dataclass(frozen=True)
class _CellGeometry:
    """Geometry view consumed by basis construction and projection."""

    id: int
    vertices: np.ndarray
    centroid: np.ndarray
    area: float
    diameter: float
    subtriangles: tuple


@dataclass(frozen=True)
class _FaceGeometry:
    id: int
    endpoints: np.ndarray
    center: np.ndarray
    length: float
    normal: np.ndarray
    ref_point: np.ndarray


@dataclass
class Mesh:
    """Immutable polygonal mesh with derived connectivity and geometry."""

    vertices: np.ndarray
    cells: list
    faces: list
    bbox: tuple  # (x0, y0, x1, y1)
    cell_centroids: np.ndarray = field(repr=False, default=None)
    cell_areas: np.ndarray = field(repr=False, default=None)
    cell_diameters: np.ndarray = field(repr=False, default=None)
    face_centers: np.ndarray = field(repr=False, default=None)
    face_lengths: np.ndarray = field(repr=False, default=None)
    face_normals: np.ndarray = field(repr=False, default=None)
    face_cells: np.ndarray = field(repr=False, default=None)
    face_ref_points: np.ndarray = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def cell_vertices(self, cell_id: int) -> np.ndarray:
        return self.vertices[list(self.cells[cell_id].vertex_ids)]

    def cell_geometry(self, cell_id: int) -> _CellGeometry:
        cell = self.cells[cell_id]
        return _CellGeometry(
            id=cell.id,
            vertices=self.cell_vertices(cell_id),
            centroid=cell.centroid,
            area=cell.area,
            diameter=cell.diameter,
            subtriangles=tuple(subtriangulate(self, cell_id)),
        )

    def face_geometry(self, face_id: int) -> _FaceGeometry:
        f = self.faces[face_id]
        ends = self.vertices[list(f.vertex_ids)]
        return _FaceGeometry(
            id=f.id, endpoints=ends, center=f.center, length=f.length,
            normal=f.normal, ref_point=f.ref_point,
        )

    def outward_normal(self, cell_id: int, face_id: int) -> np.ndarray:
        """Unit normal on ``face_id`` pointing out of ``cell_id``."""
        f = self.faces[face_id]
        if f.cells[0] == cell_id:
            return f.normal
        if f.cells[1] == cell_id:
            return -f.normal
        raise InvalidArgumentError(f"face {face_id} is not a face of cell {cell_id}")


def _polygon_area_centroid(pts: np.ndarray):
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    if abs(area) < 1e-300:
        return area, pts.mean(axis=0)
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return area, np.array([cx, cy])


def _build(vertices: np.ndarray, loops, path=None, cell_lines=None) -> Mesh:
    """Assemble a Mesh from vertex coordinates and CCW cell loops."""
    vertices = np.asarray(vertices, dtype=float)
    n_vert = len(vertices)

    def fmt_error(cell_idx, message):
        if path is not None and cell_lines is not None:
            raise MeshFormatError(path, cell_lines[cell_idx], message)
        raise InvalidArgumentError(f"cell {cell_idx}: {message}")

    # derive faces from cell loops
    edge_map = {}
    faces_raw = []  # [v_a, v_b (owner order), owner, neighbor]
    cell_face_ids = []
    for ci, loop in enumerate(loops):
        loop = tuple(int(v) for v in loop)
        if len(loop) < 3:
            fmt_error(ci, f"cell needs at least 3 vertices, got {len(loop)}")
        if any(v < 0 or v >= n_vert for v in loop):
            fmt_error(ci, f"vertex index out of range in {loop}")
        if len(set(loop)) != len(loop):
            fmt_error(ci, f"repeated vertex in cell loop {loop}")
        fids = []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (min(a, b), max(a, b))
            if key in edge_map:
                fid = edge_map[key]
                raw = faces_raw[fid]
                if raw[3] != -1:
                    raise MeshTopologyError(f"edge {key} is shared by more than two cells")
                if (raw[0], raw[1]) != (b, a):
                    raise MeshTopologyError(
                        f"edge {key} traversed in the same direction by cells {raw[2]} and {ci}"
                    )
                raw[3] = ci
            else:
                fid = len(faces_raw)
                edge_map[key] = fid
                faces_raw.append([a, b, ci, -1])
            fids.append(fid)
        cell_face_ids.append(tuple(fids))

    # cell geometry
    cells = []
    for ci, loop in enumerate(loops):
        pts = vertices[list(loop)]
        area, centroid = _polygon_area_centroid(pts)
        if area <= 0.0:
            raise DegenerateCellError(
                f"cell {ci} has nonpositive area {area:.3e}; vertex loop must be counterclockwise"
            )
        diam = float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)))
        # positive centroid sub-triangles (allows mildly non-convex cells only)
        nxt = np.roll(pts, -1, axis=0)
        sub_areas = 0.5 * ((nxt[:, 0] - pts[:, 0]) * (centroid[1] - pts[:, 1])
                           - (nxt[:, 1] - pts[:, 1]) * (centroid[0] - pts[:, 0]))
        if np.any(sub_areas <= 1e-14 * diam**2):
            raise DegenerateCellError(
                f"cell {ci}: centroid sub-triangle with nonpositive area "
                f"(min {float(sub_areas.min()):.3e}); cell is too distorted"
            )
        cells.append(Cell(id=ci, vertex_ids=tuple(int(v) for v in loop),
                          face_ids=cell_face_ids[ci], centroid=centroid,
                          area=area, diameter=diam))

    # face geometry
    faces = []
    for fid, (a, b, owner, neighbor) in enumerate(faces_raw):
        pa, pb = vertices[a], vertices[b]
        t = pb - pa
        length = float(np.hypot(*t))
        if length <= 0.0:
            raise DegenerateCellError(f"face {fid} has zero length")
        normal = np.array([t[1], -t[0]]) / length
        ref = pa if (pa[0], pa[1]) <= (pb[0], pb[1]) else pb
        faces.append(Face(id=fid, vertex_ids=(a, b), cells=(owner, neighbor),
                          center=0.5 * (pa + pb), length=length, normal=normal,
                          ref_point=ref.copy()))

    bbox = (float(vertices[:, 0].min()), float(vertices[:, 1].min()),
            float(vertices[:, 0].max()), float(vertices[:, 1].max()))
    mesh = Mesh(vertices=vertices, cells=cells, faces=faces, bbox=bbox)
    mesh.cell_centroids = np.array([c.centroid for c in cells])
    mesh.cell_areas = np.array([c.area for c in cells])
    mesh.cell_diameters = np.array([c.diameter for c in cells])
    mesh.face_centers = np.array([f.center for f in faces])
    mesh.face_lengths = np.array([f.length for f in faces])
    mesh.face_normals = np.array([f.normal for f in faces])
    mesh.face_cells = np.array([f.cells for f in faces], dtype=int)
    mesh.face_ref_points = np.array([f.ref_point for f in faces])
    return mesh


def build_cartesian_mesh(nx: int, ny: int, bbox) -> Mesh:
    """Uniform nx-by-ny quadrilateral mesh of the rectangle ``bbox`` = (x0, y0, x1, y1)."""
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"grid counts must be positive, got nx={nx}, ny={ny}")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if x1 <= x0 or y1 <= y0:
        raise InvalidArgumentError(f"bbox must have positive extents, got {bbox}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    loops = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(ny)
        for i in range(nx)
    ]
    return _build(vertices, loops)


def load_mesh(path) -> Mesh:
    """Read a ``polymesh2d 1`` file; see the module docstring for the format."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def content(line_no):
        if line_no >= len(lines):
            raise MeshFormatError(path, line_no + 1, "unexpected end of file")
        return lines[line_no].strip()

    if content(0) != MESH_FORMAT_HEADER:
        raise MeshFormatError(path, 1, f"expected header {MESH_FORMAT_HEADER!r}, got {content(0)!r}")
    tok = content(1).split()
    if len(tok) != 2 or tok[0] != "vertices":
        raise MeshFormatError(path, 2, f"expected 'vertices <count>', got {content(1)!r}")
    try:
        n_vert = int(tok[1])
    except ValueError:
        raise MeshFormatError(path, 2, f"bad vertex count {tok[1]!r}") from None
    if n_vert < 3:
        raise MeshFormatError(path, 2, f"need at least 3 vertices, got {n_vert}")
    vertices = np.empty((n_vert, 2))
    for i in range(n_vert):
        parts = content(2 + i).split()
        if len(parts) != 2:
            raise MeshFormatError(path, 3 + i, f"expected 'x y', got {content(2 + i)!r}")
        try:
            vertices[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(path, 3 + i, f"bad coordinate in {content(2 + i)!r}") from None
    row = 2 + n_vert
    tok = content(row).split()
    if len(tok) != 2 or tok[0] != "cells":
        raise MeshFormatError(path, row + 1, f"expected 'cells <count>', got {content(row)!r}")
    try:
        n_cell = int(tok[1])
    except ValueError:
        raise MeshFormatError(path, row + 1, f"bad cell count {tok[1]!r}") from None
    if n_cell < 1:
        raise MeshFormatError(path, row + 1, f"need at least 1 cell, got {n_cell}")
    loops, cell_lines = [], []
    for i in range(n_cell):
        parts = content(row + 1 + i).split()
        try:
            loops.append(tuple(int(p) for p in parts))
        except ValueError:
            raise MeshFormatError(path, row + 2 + i, f"bad vertex index in {content(row + 1 + i)!r}") from None
        cell_lines.append(row + 2 + i)
    if any(c.strip() for c in lines[row + 1 + n_cell:]):
        raise MeshFormatError(path, row + 2 + n_cell, "trailing content after cell list")
    return _build(vertices, loops, path=path, cell_lines=cell_lines)


def mesh_size(mesh: Mesh) -> float:
    """Mesh size: the maximum over cells of area divided by perimeter."""
    sizes = [c.area / sum(mesh.faces[f].length for f in c.face_ids) for c in mesh.cells]
    return float(max(sizes))


def subtriangulate(mesh: Mesh, cell_id: int):
    """Centroid sub-triangles of a cell, in vertex-loop traversal order.

    Each sub-triangle is spanned by one face (endpoints in the cell's own
    counterclockwise traversal order) and the cell centroid, so its vertices
    are counterclockwise and its area positive by mesh validation.
    """
    cell = mesh.cells[cell_id]
    loop = cell.vertex_ids
    out = []
    for (a, b), fid in zip(zip(loop, loop[1:] + loop[:1]), cell.face_ids):
        verts = np.array([mesh.vertices[a], mesh.vertices[b], cell.centroid])
        out.append(SubTriangle(cell_id=cell_id, face_id=fid, vertices=verts))
    return out


def _point_in_cell(mesh: Mesh, cell_id: int, p: np.ndarray) -> bool:
    pts = mesh.cell_vertices(cell_id)
    nxt = np.roll(pts, -1, axis=0)
    tol = 1e-9 * mesh.cells[cell_id].diameter
    # boundary-inclusive: distance from p to any edge within tolerance counts
    d = nxt - pts
    t = np.clip(np.einsum("id,id->i", p - pts, d) / np.einsum("id,id->i", d, d), 0.0, 1.0)
    closest = pts + t[:, None] * d
    if np.min(np.linalg.norm(closest - p, axis=1)) <= tol:
        return True
    # even-odd ray casting for the strict interior
    x, y = p
    inside = False
    for (x0, y0), (x1, y1) in zip(pts, nxt):
        if (y0 > y) != (y1 > y):
            x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x_cross > x:
                inside = not inside
    return inside


def locate_cell(mesh: Mesh, point) -> int:
    """Index of the cell containing ``point``; boundary hits resolve to the
    smallest adjacent cell index. Raises OutOfDomainError when no cell contains it."""
    p = np.asarray(point, dtype=float)
    if p.shape != (2,):
        raise InvalidArgumentError(f"point must be 2D, got shape {p.shape}")
    # cheap bounding-box prefilter, preserving ascending cell order
    for cell in mesh.cells:
        pts = mesh.cell_vertices(cell.id)
        tol = 1e-9 * cell.diameter
        if (p[0] < pts[:, 0].min() - tol or p[0] > pts[:, 0].max() + tol
                or p[1] < pts[:, 1].min() - tol or p[1] > pts[:, 1].max() + tol):
            continue
        if _point_in_cell(mesh, cell.id, p):
            return cell.id
    raise OutOfDomainError(f"point {tuple(p)} lies outside the mesh")
