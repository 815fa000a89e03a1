"""Pressure equation: coupled diffusivity, doubled order, zero-mean solve.

The pressure unknown lives at degree 2k when the concentration lives at k.
Its diffusion tensor is the rock permeability divided by the mixture
viscosity evaluated at an extrapolated concentration, sampled pointwise at
quadrature nodes. The pure-flux problem fixes the additive constant through
an exact mean constraint carried through static condensation, and every
solve is followed by a residual check of the full uncondensed system.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Sequence

import numpy as np

from .errors import CompatibilityError, InvalidArgumentError, SolverError
from .hho import (
    HhoSpace,
    HybridField,
    LocalDiffusionOps,
    apply_local,
    field_lincomb,
    local_diffusion_ops,
    static_condense,
)
from .linsolve import solve_with_mean_constraint
from .mesh import Mesh


@dataclass(frozen=True)
class ViscosityModel:
    """Quarter-power mixing rule between oil and solvent viscosity.

    ``mu0`` is the oil viscosity and ``mobility_ratio`` the oil/solvent
    viscosity ratio M, so mu(0) = mu0 and mu(1) = mu0 / M. Inputs are clamped
    to [0, 1]; the rule is only physical there and the clamp provides the
    bounded continuous extension the analysis assumes.
    """

    mu0: float
    mobility_ratio: float

    def __post_init__(self):
        if self.mu0 <= 0.0 or self.mobility_ratio <= 0.0:
            raise InvalidArgumentError("viscosity parameters must be positive")

    def __call__(self, c) -> np.ndarray:
        cc = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
        return self.mu0 * (1.0 + (self.mobility_ratio**0.25 - 1.0) * cc) ** (-4)


def extrapolate_concentration(c_n: HybridField, c_prev: HybridField) -> HybridField:
    """Second-order extrapolant 1.5 c^n - 0.5 c^{n-1}, coefficientwise."""
    return field_lincomb([(1.5, c_n), (-0.5, c_prev)])


@dataclass(frozen=True)
class PermeabilityField:
    """Per-cell constant symmetric positive definite rock permeability.

    ``base`` applies everywhere except inside axis-aligned ``patches``, each a
    pair (bbox, tensor) with bbox = (xmin, ymin, xmax, ymax). Patch boundaries
    must not cut cells; per-cell constancy is part of the contract.
    """

    base: np.ndarray
    patches: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "base", _check_spd(self.base))
        object.__setattr__(
            self,
            "patches",
            tuple((np.asarray(b, dtype=float), _check_spd(t)) for b, t in self.patches),
        )

    def cell_tensors(self, mesh: Mesh) -> np.ndarray:
        """Per-cell tensors (C, 2, 2); rejects cells straddling a patch edge.

        Membership is decided at the centroid; vertices may sit exactly on a
        patch edge, but none may lie strictly on the wrong side of it.
        """
        out = np.tile(self.base, (mesh.n_cells, 1, 1))
        for bbox, tensor in self.patches:
            for c in range(mesh.n_cells):
                verts = mesh.cell_vertices(c)
                if _in_box(mesh.cell_centroids[c : c + 1], bbox)[0]:
                    if not _in_box(verts, bbox).all():
                        raise InvalidArgumentError(
                            f"permeability patch boundary cuts cell {c}; "
                            "patches must be unions of whole cells"
                        )
                    out[c] = tensor
                elif _in_box(verts, bbox, shrink=True).any():
                    raise InvalidArgumentError(
                        f"permeability patch boundary cuts cell {c}; "
                        "patches must be unions of whole cells"
                    )
        return out


def _check_spd(mat) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (2, 2):
        raise InvalidArgumentError(f"permeability tensor must be 2x2, got {mat.shape}")
    if abs(mat[0, 1] - mat[1, 0]) > 1e-12 * max(1.0, np.abs(mat).max()):
        raise InvalidArgumentError("permeability tensor must be symmetric")
    if np.linalg.eigvalsh(mat).min() <= 0.0:
        raise InvalidArgumentError("permeability tensor must be positive definite")
    return mat


def _in_box(points, bbox, shrink: bool = False) -> np.ndarray:
    tol = 1e-9 * max(bbox[2] - bbox[0], bbox[3] - bbox[1], 1.0)
    if shrink:
        tol = -tol
    return (
        (points[:, 0] >= bbox[0] - tol)
        & (points[:, 0] <= bbox[2] + tol)
        & (points[:, 1] >= bbox[1] - tol)
        & (points[:, 1] <= bbox[3] + tol)
    )


def kappa_samples(
    space: HhoSpace,
    perm_cell: np.ndarray,
    viscosity: ViscosityModel,
    c_tilde: HybridField | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Sample K(x)/mu(c~(x)) at this space's volume and face quadrature nodes.

    ``perm_cell`` is the per-cell tensor array (C, 2, 2). The concentration
    enters through the cell polynomial of ``c_tilde`` only; the basis nesting
    makes its evaluation a prefix contraction of this space's tables.
    """
    perm_cell = np.asarray(perm_cell, dtype=float)
    if perm_cell.shape != (space.n_cells, 2, 2):
        raise InvalidArgumentError("need one 2x2 permeability tensor per cell")
    dim_c = 0 if c_tilde is None else c_tilde.cell.shape[1]
    if dim_c > space.nrb:
        raise InvalidArgumentError("concentration degree exceeds the sampling tables")
    lam_cell, lam_face = [], []
    for g in space.groups:
        k_t = perm_cell[g.cell_ids]
        if c_tilde is None:
            mu_c = np.full(g.cq_w.shape, viscosity.mu0)
            mu_f = np.full(g.fq_w.shape, viscosity.mu0)
        else:
            coefs = c_tilde.cell[g.cell_ids]
            mu_c = viscosity(np.einsum("cqi,ci->cq", g.phi_c[:, :, :dim_c], coefs))
            mu_f = viscosity(np.einsum("cfqi,ci->cfq", g.phi_cf[:, :, :, :dim_c], coefs))
        lam_cell.append(k_t[:, None, :, :] / mu_c[:, :, None, None])
        lam_face.append(k_t[:, None, None, :, :] / mu_f[:, :, :, None, None])
    return lam_cell, lam_face


def pressure_rhs(
    space: HhoSpace, q_plus: np.ndarray, q_minus: np.ndarray, rel_tol: float = 1e-12
) -> np.ndarray:
    """Cell load blocks of the net source q+ - q-, with compatibility check.

    Sources are per-cell constants (C,). A pure-flux problem is only solvable
    when total injection balances total production; imbalance beyond
    ``rel_tol`` times the source scale raises :class:`CompatibilityError`.
    """
    q_plus = np.asarray(q_plus, dtype=float)
    q_minus = np.asarray(q_minus, dtype=float)
    if q_plus.shape != (space.n_cells,) or q_minus.shape != (space.n_cells,):
        raise InvalidArgumentError("sources must be per-cell constant arrays")
    areas = space.mesh.cell_areas
    total_in = float(q_plus @ areas)
    total_out = float(q_minus @ areas)
    scale = max(abs(total_in), abs(total_out))
    if abs(total_in - total_out) > rel_tol * max(scale, 1e-300):
        raise CompatibilityError(
            f"sources are incompatible: injection {total_in:.15g} vs "
            f"production {total_out:.15g}"
        )
    return (q_plus - q_minus)[:, None] * space.ivol[:, : space.ncb]


@dataclass
class PressureState:
    """A solved zero-mean pressure together with everything flux extraction needs."""

    field: HybridField
    ops: LocalDiffusionOps
    multiplier: float
    residual: float
    time: float = 0.0


def _full_residual(space, ops, field, gvec_cell, lam, rhs_cell):
    """Relative residual of the uncondensed constrained system."""
    out = apply_local(space, ops.amat, field)
    out[: space.n_cell_dofs] += lam * gvec_cell.ravel()
    b = np.zeros(space.n_dofs)
    b[: space.n_cell_dofs] = rhs_cell.ravel()
    scale = max(float(np.linalg.norm(b)), float(np.linalg.norm(out)), 1e-300)
    return float(np.linalg.norm(out - b)) / scale


def solve_pressure(
    space: HhoSpace,
    lam_cell: Sequence[np.ndarray],
    lam_face: Sequence[np.ndarray],
    rhs_cell: np.ndarray,
    tol: float = 1e-9,
    time: float = 0.0,
) -> PressureState:
    """Solve the pure-flux diffusion problem with zero-mean normalisation.

    Builds local operators for the sampled tensor, condenses to face
    unknowns, solves the bordered mean-constrained system, recovers cell
    unknowns, and verifies both the full-system residual and the zero-mean
    condition before returning.
    """
    ops = local_diffusion_ops(space, lam_cell=lam_cell, lam_face=lam_face)
    return solve_pressure_with_ops(space, ops, rhs_cell, tol=tol, time=time)


def solve_pressure_with_ops(
    space: HhoSpace,
    ops: LocalDiffusionOps,
    rhs_cell: np.ndarray,
    tol: float = 1e-9,
    time: float = 0.0,
) -> PressureState:
    gcell = space.ivol[:, : space.ncb]
    cond = static_condense(space, ops.amat, rhs_cell)
    gt, d, c0 = cond.constraint(gcell)
    x_face, lam = solve_with_mean_constraint(
        cond.matrix, gt, d, cond.rhs, target=-c0, tol=tol
    )
    field = cond.recover(x_face, lam=lam, gcell=gcell)
    residual = _full_residual(space, ops, field, gcell, lam, rhs_cell)
    if residual > tol:
        raise SolverError(
            f"pressure system residual {residual:.3e} exceeds {tol:.1e}",
            residual=residual,
        )
    norm = space.l2_norm(field)
    mean = space.integral(field)
    if abs(mean) > 1e-9 * max(norm, 1e-300):
        raise SolverError(f"pressure mean {mean:.3e} violates the zero-mean contract")
    return PressureState(field=field, ops=ops, multiplier=lam, residual=residual, time=time)


def solve_diffusion(
    mesh: Mesh,
    degree: int,
    tensor_fn: Callable[[np.ndarray], np.ndarray],
    source_fn: Callable[[np.ndarray], np.ndarray],
    exactness: int | None = None,
    tol: float = 1e-9,
) -> tuple[HhoSpace, HybridField]:
    """Zero-mean pure-Neumann diffusion solve for a smooth source field.

    General-degree entry point used by convergence studies: the tensor and
    source are arbitrary smooth callables, sampled at quadrature nodes built
    to the requested exactness.
    """
    space = HhoSpace(mesh, degree, exactness=exactness)
    ops = local_diffusion_ops(space, fn=tensor_fn)
    vals = [
        np.asarray(source_fn(g.cq_pts.reshape(-1, 2)), dtype=float).reshape(g.cq_w.shape)
        for g in space.groups
    ]
    rhs_cell = space.cell_moments(vals)
    state = solve_pressure_with_ops(space, ops, rhs_cell, tol=tol)
    return space, state.field
