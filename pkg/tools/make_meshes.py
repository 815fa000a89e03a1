#!/usr/bin/env python3
"""Generate the non-Cartesian mesh files shipped in meshes/.

One coarse mesh per family, all on (0, 1000)^2: an unstructured
triangulation (56 cells, 92 edges), a zigzag-distorted quadrilateral mesh
(289 cells, 612 edges), a hexagon-dominant tiling (62 edges), and the 4x4
Cartesian reference (40 edges). Output is deterministic; every file is
validated by loading it back before it is kept.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np
from scipy.spatial import Delaunay

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hhoflow.mesh import MESH_FORMAT_HEADER, build_cartesian_mesh, load_mesh, mesh_size

SIDE = 1000.0


def _ccw(tri: np.ndarray, pts: np.ndarray) -> tuple:
    a, b, c = pts[tri]
    if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) < 0.0:
        return (int(tri[0]), int(tri[2]), int(tri[1]))
    return tuple(int(v) for v in tri)


def triangular_vertices_loops(seed: int = 7):
    """Delaunay triangulation: 16 boundary points, 21 jittered interior ones.

    With 37 points of which 16 lie on the hull, any triangulation in general
    position has 2*37 - 16 - 2 = 56 triangles and 3*37 - 16 - 3 = 92 edges.
    """
    side = np.array([0.0, 250.0, 500.0, 750.0])
    boundary = np.concatenate([
        np.stack([side, np.zeros(4)], axis=1),
        np.stack([np.full(4, SIDE), side], axis=1),
        np.stack([SIDE - side, np.full(4, SIDE)], axis=1),
        np.stack([np.zeros(4), SIDE - side], axis=1),
    ])
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.linspace(200.0, 800.0, 5), np.linspace(166.0, 834.0, 4))
    interior = np.stack([gx.ravel(), gy.ravel()], axis=1)
    interior = np.vstack([interior, [500.0, 500.0]])
    interior += rng.uniform(-55.0, 55.0, size=interior.shape)
    pts = np.vstack([boundary, interior])
    tri = Delaunay(pts)
    loops = [_ccw(simplex, pts) for simplex in tri.simplices]
    return pts, loops


def kershaw_vertices_loops(n: int = 17, amplitude: float = 0.2, teeth: int = 2):
    """Logically Cartesian n x n grid with zigzag layers.

    Columns stay vertical; each column's y-partition follows the row
    parameter plus a triangle wave with the given tooth count, scaled to
    vanish at the top and bottom boundaries. The amplitude keeps rows
    ordered (4*amplitude < 1), so every cell is a convex vertical-sided
    trapezoid. More teeth tilt cells harder relative to their height; the
    second level uses that to reproduce the family's severe distortion.
    """
    def wave(t):
        return 1.0 - 4.0 * abs(((teeth * t) % 1.0) - 0.5)

    vid = {}
    verts = []
    for j in range(n + 1):
        for i in range(n + 1):
            s, t = j / n, i / n
            y = SIDE * (s + amplitude * 4.0 * s * (1.0 - s) * wave(t))
            vid[(i, j)] = len(verts)
            verts.append((SIDE * t, y))
    loops = []
    for j in range(n):
        for i in range(n):
            loops.append((vid[(i, j)], vid[(i + 1, j)], vid[(i + 1, j + 1)], vid[(i, j + 1)]))
    return np.array(verts), loops


def _clip_halfplane(poly: list, mid: np.ndarray, direction: np.ndarray) -> list:
    """Keep the part of a convex polygon with (p - mid) . direction <= 0."""
    out = []
    for idx in range(len(poly)):
        a, b = np.asarray(poly[idx]), np.asarray(poly[(idx + 1) % len(poly)])
        da, db = (a - mid) @ direction, (b - mid) @ direction
        if da <= 0.0:
            out.append(a)
        if (da < 0.0) != (db < 0.0) and da != db:
            out.append(a + (b - a) * (da / (da - db)))
    return out


def hexagonal_vertices_loops(nx: int = 4, ny: int = 5):
    """Voronoi tiling of a staggered lattice, clipped to the square.

    Interior cells are hexagons; boundary cells are the clipped remainders.
    Vertices are snapped to a 1e-6 grid so that neighbouring cells share
    exact endpoints. One bottom boundary edge is split at its midpoint (a
    common feature of hexagon-dominant tilings, whose boundary rows carry
    extra nodes where the pattern meets the domain edge).
    """
    dx, dy = SIDE / nx, SIDE / ny
    seeds = []
    for j in range(ny):
        for i in range(nx):
            seeds.append(((i + 0.25 + 0.5 * (j % 2)) * dx, (j + 0.5) * dy))
    seeds = np.array(seeds)
    box = [np.array(p) for p in
           [(0.0, 0.0), (SIDE, 0.0), (SIDE, SIDE), (0.0, SIDE)]]
    vid = {}
    verts = []
    loops = []
    for i, s in enumerate(seeds):
        poly = box
        for j, other in enumerate(seeds):
            if j == i:
                continue
            poly = _clip_halfplane(poly, (s + other) / 2.0, other - s)
        loop = []
        for p in poly:
            key = (round(float(p[0]), 6), round(float(p[1]), 6))
            if key not in vid:
                vid[key] = len(verts)
                verts.append(key)
            if not loop or loop[-1] != vid[key]:
                loop.append(vid[key])
        if loop[0] == loop[-1]:
            loop.pop()
        loops.append(list(loop))
    _split_boundary_edge(verts, loops, near=(SIDE / 2.0, 0.0))
    return np.array(verts, dtype=float), [tuple(loop) for loop in loops]


def _split_boundary_edge(verts: list, loops: list, near: tuple) -> None:
    """Insert the midpoint of the bottom boundary edge closest to ``near``."""
    best = None
    for ci, loop in enumerate(loops):
        for idx in range(len(loop)):
            a, b = verts[loop[idx]], verts[loop[(idx + 1) % len(loop)]]
            if a[1] != 0.0 or b[1] != 0.0:
                continue
            mid = ((a[0] + b[0]) / 2.0, 0.0)
            score = abs(mid[0] - near[0])
            if best is None or score < best[0]:
                best = (score, ci, idx, mid)
    if best is None:
        raise SystemExit("no bottom boundary edge found to split")
    _, ci, idx, mid = best
    verts.append((round(mid[0], 6), 0.0))
    loops[ci].insert(idx + 1, len(verts) - 1)


def write_mesh_file(path, verts: np.ndarray, loops) -> None:
    lines = [MESH_FORMAT_HEADER, f"vertices {len(verts)}"]
    for x, y in verts:
        lines.append(f"{format(x, '.17g')} {format(y, '.17g')}")
    lines.append(f"cells {len(loops)}")
    for loop in loops:
        lines.append(" ".join(str(v) for v in loop))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def generate(out_dir: pathlib.Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = {
        "triangular_1.txt": (triangular_vertices_loops(), 56, 92),
        "kershaw_1.txt": (kershaw_vertices_loops(), 289, 612),
        "kershaw_2.txt": (kershaw_vertices_loops(n=34, amplitude=0.24, teeth=12), 1156, 2380),
        "hexagonal_1.txt": (hexagonal_vertices_loops(), None, 62),
    }
    for name, ((verts, loops), n_cells, n_edges) in targets.items():
        path = out_dir / name
        write_mesh_file(path, verts, loops)
        mesh = load_mesh(path)
        if n_cells is not None and mesh.n_cells != n_cells:
            raise SystemExit(f"{name}: expected {n_cells} cells, got {mesh.n_cells}")
        if mesh.n_faces != n_edges:
            raise SystemExit(f"{name}: expected {n_edges} edges, got {mesh.n_faces}")
        print(f"{name}: {mesh.n_cells} cells, {mesh.n_faces} edges, "
              f"size {mesh_size(mesh):.3g}")
    cart = build_cartesian_mesh(4, 4, (0.0, 0.0, SIDE, SIDE))
    path = out_dir / "cartesian_1.txt"
    write_mesh_file(path, cart.vertices, [c.vertex_ids for c in cart.cells])
    mesh = load_mesh(path)
    print(f"cartesian_1.txt: {mesh.n_cells} cells, {mesh.n_faces} edges, "
          f"size {mesh_size(mesh):.3g}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--out",
        default=str(pathlib.Path(__file__).resolve().parents[1] / "meshes"),
        help="output directory (default: the repository's meshes/)",
    )
    args = parser.parse_args()
    generate(pathlib.Path(args.out))


if __name__ == "__main__":
    main()
