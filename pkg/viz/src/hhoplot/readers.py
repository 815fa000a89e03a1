"""Strict readers for the solver's field and recovery CSV files.

Field files carry the header ``x,y,cell,value`` and one sample per row;
lines starting with ``#`` hold polynomial coefficients for exact
reconstruction and are irrelevant for plotting, so they are skipped.
Recovery files carry the header ``t_days,recovery_fraction``. Both readers
return read-only arrays: rendering must never write back into its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIELD_HEADER = "x,y,cell,value"
RECOVERY_HEADER = "t_days,recovery_fraction"


class ParseError(ValueError):
    """Malformed CSV input, reported with file and line number."""


@dataclass(frozen=True)
class FieldSamples:
    """Scattered field samples: coordinates, owning cell, and value."""

    x: np.ndarray
    y: np.ndarray
    cell: np.ndarray
    value: np.ndarray


def _data_lines(path: Path, expected_header: str):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != expected_header:
        raise ParseError(f"{path}:1: expected header {expected_header!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def read_field_csv(path) -> FieldSamples:
    path = Path(path)
    xs, ys, cells, vals = [], [], [], []
    for lineno, line in _data_lines(path, FIELD_HEADER):
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
            cells.append(int(parts[2]))
            vals.append(float(parts[3]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not xs:
        raise ParseError(f"{path}: no samples")
    if not np.isfinite(vals).all() or not np.isfinite(xs).all() or not np.isfinite(ys).all():
        raise ParseError(f"{path}: non-finite sample")
    return FieldSamples(
        x=_readonly(xs), y=_readonly(ys), cell=_readonly(cells, int), value=_readonly(vals)
    )


def read_recovery_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    ts, fracs = [], []
    for lineno, line in _data_lines(path, RECOVERY_HEADER):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            ts.append(float(parts[0]))
            fracs.append(float(parts[1]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not ts:
        raise ParseError(f"{path}: no rows")
    if not np.isfinite(ts).all() or not np.isfinite(fracs).all():
        raise ParseError(f"{path}: non-finite value")
    return _readonly(ts), _readonly(fracs)
