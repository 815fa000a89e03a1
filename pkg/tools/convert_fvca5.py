#!/usr/bin/env python3
"""Convert an FVCA5-benchmark-style 2D mesh description to the native format.

The input is line-oriented text with two sections, each a keyword line, a
count line, then that many data lines:

    vertices                (also accepted: sommets)
    <n>
    <x> <y>                 (n lines)
    triangles | quadrangles | cells | volumes
    <m>
    <v1> <v2> ...           (m lines of 1-based vertex indices; for the
                             'cells'/'volumes' keywords each line starts
                             with that cell's vertex count)

Blank lines and lines starting with '#' are ignored. Cell loops given
clockwise are reversed. The output is the native polygonal mesh format and
is validated by loading it back before the file is kept.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from make_meshes import write_mesh_file

from hhoflow.mesh import load_mesh, mesh_size

_VERTEX_KEYWORDS = {"vertices", "sommets"}
_CELL_KEYWORDS = {"triangles": 3, "quadrangles": 4, "cells": 0, "volumes": 0}


class FormatError(SystemExit):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")


def _content_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    return [
        (no, line.strip())
        for no, line in enumerate(raw, start=1)
        if line.strip() and not line.strip().startswith("#")
    ]


def parse_fvca5(path) -> tuple[np.ndarray, list]:
    lines = _content_lines(path)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(path, lines[-1][0] if lines else 0, "unexpected end of file")
        item = lines[pos]
        pos += 1
        return item

    no, keyword = take()
    if keyword.lower() not in _VERTEX_KEYWORDS:
        raise FormatError(path, no, f"expected a vertex section keyword, got {keyword!r}")
    no, count = take()
    try:
        n_vert = int(count)
    except ValueError:
        raise FormatError(path, no, f"expected the vertex count, got {count!r}")
    verts = np.empty((n_vert, 2))
    for i in range(n_vert):
        no, line = take()
        parts = line.split()
        if len(parts) < 2:
            raise FormatError(path, no, f"expected 'x y', got {line!r}")
        try:
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise FormatError(path, no, f"bad coordinate in {line!r}")

    no, keyword = take()
    arity = _CELL_KEYWORDS.get(keyword.lower())
    if arity is None:
        raise FormatError(path, no, f"expected a cell section keyword, got {keyword!r}")
    no, count = take()
    try:
        n_cell = int(count)
    except ValueError:
        raise FormatError(path, no, f"expected the cell count, got {count!r}")
    loops = []
    for _ in range(n_cell):
        no, line = take()
        try:
            nums = [int(p) for p in line.split()]
        except ValueError:
            raise FormatError(path, no, f"bad vertex index in {line!r}")
        if arity == 0:
            if not nums or len(nums) != nums[0] + 1:
                raise FormatError(path, no, f"expected '<count> v1 ... vcount', got {line!r}")
            nums = nums[1:]
        elif len(nums) != arity:
            raise FormatError(path, no, f"expected {arity} vertex indices, got {line!r}")
        if any(v < 1 or v > n_vert for v in nums):
            raise FormatError(path, no, f"vertex index out of range in {line!r}")
        loops.append(_ccw_loop(verts, [v - 1 for v in nums]))
    return verts, loops


def _ccw_loop(verts: np.ndarray, loop: list) -> tuple:
    pts = verts[loop]
    twice_area = float(
        np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
    )
    return tuple(reversed(loop)) if twice_area < 0.0 else tuple(loop)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input", help="FVCA5-style mesh description")
    parser.add_argument("output", help="native mesh file to write")
    args = parser.parse_args()
    verts, loops = parse_fvca5(args.input)
    write_mesh_file(args.output, verts, loops)
    mesh = load_mesh(args.output)
    print(f"{args.output}: {mesh.n_cells} cells, {mesh.n_faces} edges, "
          f"size {mesh_size(mesh):.6g}")


if __name__ == "__main__":
    main()
