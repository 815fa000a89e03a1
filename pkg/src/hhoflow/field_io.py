"""Run configuration files, mesh files, and CSV output for fields and metrics.

Every file is UTF-8 with LF line endings, ``.`` as the decimal separator,
and floats printed with 17 significant digits so that reading a file back
reproduces the exact doubles that were written. Field CSVs carry plotting
samples as plain rows and the defining polynomial coefficients as comment
rows: spreadsheet tools and plotting scripts see only the samples, while the
file stays self-contained for exact re-evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .basis import make_cell_basis
from .errors import ConfigError, InvalidArgumentError
from .hho import HhoSpace, HybridField
from .mesh import MESH_FORMAT_HEADER, Mesh, subtriangulate
from .pressure import PermeabilityField
from .simulator import MeshSpec, RunReport, SimulationConfig, StepDiagnostics, WellSpec

FIELD_CSV_HEADER = "x,y,cell,value"
RECOVERY_CSV_HEADER = "t_days,recovery_fraction"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- field sample tables -------------------------------------------------------


@dataclass(frozen=True)
class FieldSampleTable:
    """Contents of a field CSV: vertex samples plus per-cell coefficients.

    ``x``, ``y``, ``cell``, ``value`` are parallel arrays with one entry per
    centroid sub-triangle vertex; ``coefs`` holds one coefficient row per
    cell of the polynomial those values were sampled from.
    """

    x: np.ndarray
    y: np.ndarray
    cell: np.ndarray
    value: np.ndarray
    coefs: np.ndarray


def write_field_csv(space: HhoSpace, field: HybridField, path) -> None:
    """Sample one field's cell polynomials over the sub-triangle vertices.

    Rows follow the header ``x,y,cell,value``, ordered by cell id, then the
    cell's face traversal order, then the sub-triangle's vertex order (the
    two face endpoints, then the centroid). Coefficient rows follow the data
    as ``# coef,<cell>,<i>,<value>`` comments.
    """
    space.check_field(field)
    if not np.isfinite(field.cell).all():
        raise InvalidArgumentError("field has non-finite cell coefficients")
    mesh = space.mesh
    lines = [FIELD_CSV_HEADER]
    for c in range(mesh.n_cells):
        basis = make_cell_basis(mesh.cells[c], space.degree)
        for tri in subtriangulate(mesh, c):
            vals = basis.eval(tri.vertices) @ field.cell[c]
            for (px, py), v in zip(tri.vertices, vals):
                lines.append(f"{_fmt(px)},{_fmt(py)},{c},{_fmt(v)}")
    for c in range(mesh.n_cells):
        for i, v in enumerate(field.cell[c]):
            lines.append(f"# coef,{c},{i},{_fmt(v)}")
    _write_lines(path, lines)


def read_field_csv(path) -> FieldSampleTable:
    """Parse a field CSV back into arrays; strict about the format."""
    lines = _read_lines(path)
    if not lines or lines[0] != FIELD_CSV_HEADER:
        raise InvalidArgumentError(
            f"{path}:1: expected header {FIELD_CSV_HEADER!r}"
        )
    samples, coefs = [], {}
    for no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("#"):
            parts = [p.strip() for p in line.lstrip("#").split(",")]
            if len(parts) != 4 or parts[0] != "coef":
                raise InvalidArgumentError(f"{path}:{no}: bad comment row {line!r}")
            coefs[(int(parts[1]), int(parts[2]))] = float(parts[3])
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise InvalidArgumentError(f"{path}:{no}: expected 4 columns, got {line!r}")
        try:
            samples.append((float(parts[0]), float(parts[1]), int(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise InvalidArgumentError(f"{path}:{no}: {exc}") from None
    if not samples:
        raise InvalidArgumentError(f"{path}: no sample rows")
    x, y, cell, value = (np.array(col) for col in zip(*samples))
    n_cells = int(cell.max()) + 1
    ncb = 1 + max((i for _, i in coefs), default=0)
    table = np.full((n_cells, ncb), np.nan)
    for (c, i), v in coefs.items():
        table[c, i] = v
    if not np.isfinite(table).all():
        raise InvalidArgumentError(f"{path}: missing or non-finite coefficient rows")
    return FieldSampleTable(x=x, y=y, cell=cell.astype(int), value=value, coefs=table)


# -- run metrics ----------------------------------------------------------------


def write_recovery_series(report: RunReport, path) -> None:
    """Time column in days against swept pore-volume fraction, one row per
    recorded state (including the initial one)."""
    lines = [RECOVERY_CSV_HEADER]
    for t, frac in report.recovery:
        lines.append(f"{_fmt(t)},{_fmt(frac)}")
    _write_lines(path, lines)


def read_recovery_series(path) -> tuple[np.ndarray, np.ndarray]:
    lines = _read_lines(path)
    if not lines or lines[0] != RECOVERY_CSV_HEADER:
        raise InvalidArgumentError(f"{path}:1: expected header {RECOVERY_CSV_HEADER!r}")
    rows = [tuple(float(p) for p in line.split(",")) for line in lines[1:] if line]
    if not rows:
        return np.empty(0), np.empty(0)
    t, frac = (np.array(col) for col in zip(*rows))
    return t, frac


def write_diagnostics_csv(report: RunReport, path) -> None:
    """One row of residuals and stability indicators per time step."""
    names = [f.name for f in dataclass_fields(StepDiagnostics)]
    lines = [",".join(names)]
    for step in report.steps:
        cells = []
        for name in names:
            v = getattr(step, name)
            if v is None:
                cells.append("")
            elif isinstance(v, int):
                cells.append(str(v))
            else:
                cells.append(_fmt(v))
        lines.append(",".join(cells))
    _write_lines(path, lines)


# -- mesh files ------------------------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    """Vertex table plus counterclockwise cell loops, readable by the mesh
    loader."""
    lines = [MESH_FORMAT_HEADER, f"vertices {len(mesh.vertices)}"]
    for vx, vy in mesh.vertices:
        lines.append(f"{_fmt(vx)} {_fmt(vy)}")
    lines.append(f"cells {mesh.n_cells}")
    for cell in mesh.cells:
        lines.append(" ".join(str(v) for v in cell.vertex_ids))
    _write_lines(path, lines)


# -- configuration files ----------------------------------------------------------

_SCALAR_KEYS = {
    "mesh_kind": str,
    "mesh_nx": int,
    "mesh_ny": int,
    "mesh_path": str,
    "k": int,
    "dt": float,
    "t_f": float,
    "stepper": str,
    "mu0": float,
    "mobility_ratio": float,
    "d_m": float,
    "d_l": float,
    "d_t": float,
    "porosity": float,
    "c_hat": float,
    "c0": float,
    "output_every": int,
}
_LIST_KEYS = {"mesh_bounds", "well", "permeability", "permeability_patch"}
_REPEATABLE = {"well", "permeability_patch"}
_REQUIRED = ("k", "dt", "t_f", "permeability")


def read_config(path) -> SimulationConfig:
    """Strict ``key = value`` parse producing a validated configuration.

    Unknown keys, duplicate keys, malformed values, and every semantic
    problem are all collected before raising, so one failed parse reports
    the complete list of fixes needed.
    """
    lines = _read_lines(path)
    problems: list[str] = []
    seen: dict[str, object] = {}
    wells: list[WellSpec] = []
    patches: list[tuple] = []
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            problems.append(f"line {no}: expected 'key = value', got {line!r}")
            continue
        if key not in _SCALAR_KEYS and key not in _LIST_KEYS:
            problems.append(f"line {no}: unknown key {key!r}")
            continue
        if key not in _REPEATABLE and key in seen:
            problems.append(f"line {no}: duplicate key {key!r}")
            continue
        if key == "well":
            spec = _parse_well(value, no, problems)
            if spec is not None:
                wells.append(spec)
            seen[key] = True
        elif key == "permeability_patch":
            patch = _parse_patch(value, no, problems)
            if patch is not None:
                patches.append(patch)
            seen[key] = True
        elif key == "permeability":
            seen[key] = _parse_tensor(value, no, problems)
        elif key == "mesh_bounds":
            nums = _parse_floats(value, no, problems, "mesh_bounds")
            if nums is not None and len(nums) != 4:
                problems.append(f"line {no}: mesh_bounds needs 4 numbers, got {len(nums)}")
            elif nums is not None:
                seen[key] = tuple(nums)
        else:
            caster = _SCALAR_KEYS[key]
            try:
                seen[key] = caster(value)
            except ValueError:
                kind = "an integer" if caster is int else "a number"
                problems.append(f"line {no}: {key} must be {kind}, got {value!r}")
    for key in _REQUIRED:
        if key not in seen:
            problems.append(f"missing required key {key!r}")
    if problems:
        raise ConfigError(problems)

    mesh = MeshSpec(
        kind=seen.get("mesh_kind", "cartesian"),
        nx=seen.get("mesh_nx", 32),
        ny=seen.get("mesh_ny", 32),
        bounds=seen.get("mesh_bounds", (0.0, 0.0, 1000.0, 1000.0)),
        path=seen.get("mesh_path"),
    )
    try:
        permeability = PermeabilityField(base=seen["permeability"], patches=tuple(patches))
    except InvalidArgumentError as exc:
        raise ConfigError([f"permeability: {exc}"]) from None
    defaults = {
        f.name: f.default for f in dataclass_fields(SimulationConfig) if f.name in _SCALAR_KEYS
    }
    scalars = {name: seen.get(name, default) for name, default in defaults.items()}
    config = SimulationConfig(
        mesh=mesh, permeability=permeability, wells=tuple(wells), **scalars
    )
    found = config.validate()
    if found:
        raise ConfigError(found)
    return config


def write_config(config: SimulationConfig, path) -> None:
    """Canonical serialisation; reading it back reproduces the exact config."""
    lines = [
        f"mesh_kind = {config.mesh.kind}",
        f"mesh_nx = {config.mesh.nx}",
        f"mesh_ny = {config.mesh.ny}",
        "mesh_bounds = " + ", ".join(_fmt(v) for v in config.mesh.bounds),
    ]
    if config.mesh.path is not None:
        lines.append(f"mesh_path = {config.mesh.path}")
    lines += [
        f"k = {config.k}",
        f"dt = {_fmt(config.dt)}",
        f"t_f = {_fmt(config.t_f)}",
        f"stepper = {config.stepper}",
    ]
    for w in config.wells:
        lines.append(
            f"well = {w.kind}, {_fmt(w.location[0])}, {_fmt(w.location[1])}, {_fmt(w.rate)}"
        )
    lines.append("permeability = " + ", ".join(_fmt(v) for v in _tensor_numbers(config.permeability.base)))
    for bbox, tensor in config.permeability.patches:
        nums = [_fmt(v) for v in bbox] + [_fmt(v) for v in _tensor_numbers(tensor)]
        lines.append("permeability_patch = " + ", ".join(nums))
    for name in ("mu0", "mobility_ratio", "d_m", "d_l", "d_t", "porosity", "c_hat", "c0"):
        lines.append(f"{name} = {_fmt(getattr(config, name))}")
    lines.append(f"output_every = {config.output_every}")
    _write_lines(path, lines)


def _parse_floats(value, no, problems, key):
    parts = [p.strip() for p in value.split(",")]
    try:
        return [float(p) for p in parts]
    except ValueError:
        problems.append(f"line {no}: {key} must be comma-separated numbers, got {value!r}")
        return None


def _parse_well(value, no, problems):
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 4:
        problems.append(f"line {no}: well needs 'kind, x, y, rate', got {value!r}")
        return None
    kind = parts[0]
    try:
        x, y, rate = (float(p) for p in parts[1:])
        return WellSpec(location=(x, y), rate=rate, kind=kind)
    except (ValueError, InvalidArgumentError) as exc:
        problems.append(f"line {no}: well: {exc}")
        return None


def _tensor_from_numbers(nums):
    if len(nums) == 1:
        return nums[0] * np.eye(2)
    if len(nums) == 3:
        return np.array([[nums[0], nums[1]], [nums[1], nums[2]]])
    if len(nums) == 4:
        return np.array(nums).reshape(2, 2)
    return None


def _tensor_numbers(t: np.ndarray):
    if t[0, 1] == 0.0 and t[1, 0] == 0.0 and t[0, 0] == t[1, 1]:
        return [t[0, 0]]
    return [t[0, 0], t[0, 1], t[1, 1]]


def _parse_tensor(value, no, problems):
    nums = _parse_floats(value, no, problems, "permeability")
    if nums is None:
        return None
    tensor = _tensor_from_numbers(nums)
    if tensor is None:
        problems.append(
            f"line {no}: permeability needs 1 (isotropic), 3 (xx, xy, yy), or 4 numbers"
        )
    return tensor


def _parse_patch(value, no, problems):
    nums = _parse_floats(value, no, problems, "permeability_patch")
    if nums is None:
        return None
    if len(nums) - 4 not in (1, 3, 4):
        problems.append(
            f"line {no}: permeability_patch needs 'xmin, ymin, xmax, ymax' plus a tensor"
        )
        return None
    return (tuple(nums[:4]), _tensor_from_numbers(nums[4:]))


# -- shared helpers ----------------------------------------------------------------


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()
