"""Transport half-step: dispersion from the velocity, upwinded advection.

The concentration is advanced implicitly to the midpoint of a step. Its
system couples a diffusion operator whose tensor is rebuilt pointwise from
the Darcy velocity with an advection-reaction form built around a discrete
advective derivative; upwind face terms keyed to the negative part of the
flux supply the stability that makes the whole matrix invertible even with
zero molecular diffusion. Velocity and flux samples arrive on the quadrature
nodes of the donor pressure space; both spaces are constructed with one
shared exactness so those tables transfer pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SolverError
from .hho import (
    HhoSpace,
    HybridField,
    apply_local,
    field_lincomb,
    local_diffusion_ops,
    static_condense,
)
from .linsolve import solve_direct


@dataclass(frozen=True)
class DispersionModel:
    """Peaceman dispersion inputs: diffusion lengths plus a porosity field.

    ``d_m`` is molecular diffusion (area/time), ``d_l`` and ``d_t`` the
    longitudinal and transverse dispersion lengths. ``porosity`` is constant
    per cell; scalars are broadcast when the mesh size is known.
    """

    d_m: float
    d_l: float
    d_t: float
    porosity: float | np.ndarray

    def __post_init__(self):
        if self.d_l <= 0.0 or self.d_t <= 0.0 or self.d_m < 0.0:
            raise InvalidArgumentError(
                "dispersion lengths must be positive and molecular diffusion nonnegative"
            )
        if np.min(self.porosity) <= 0.0:
            raise InvalidArgumentError("porosity must be positive")

    def cell_porosity(self, n_cells: int) -> np.ndarray:
        phi = np.asarray(self.porosity, dtype=float)
        if phi.ndim == 0:
            return np.full(n_cells, float(phi))
        if phi.shape != (n_cells,):
            raise InvalidArgumentError("porosity array must hold one value per cell")
        return phi


def dispersion_tensor(u: np.ndarray, phi, model: DispersionModel) -> np.ndarray:
    """Velocity-dependent tensor phi d_m I + |u|(d_l E + d_t(I - E)).

    ``u`` may carry any leading shape; ``phi`` broadcasts against it. E is
    the projector on the flow direction, taken as zero where u vanishes, so
    a still fluid sees the porosity-scaled molecular part only. Porosity
    multiplies molecular diffusion alone: mechanical dispersion is already
    proportional to the Darcy velocity, which carries the pore-volume factor.
    """
    u = np.asarray(u, dtype=float)
    mag = np.linalg.norm(u, axis=-1)
    proj = np.zeros(u.shape[:-1] + (2, 2))
    moving = mag > 0.0
    outer = u[..., :, None] * u[..., None, :]
    proj[moving] = outer[moving] / (mag[moving] ** 2)[..., None, None]
    eye = np.eye(2)
    mech = mag[..., None, None] * (model.d_l * proj + model.d_t * (eye - proj))
    return np.asarray(phi, dtype=float)[..., None, None] * (model.d_m * eye) + mech


def dispersion_samples(
    space: HhoSpace,
    model: DispersionModel,
    u_cell: list[np.ndarray],
    u_face: list[np.ndarray],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Tensor samples at this space's nodes from donor velocity samples."""
    phi = model.cell_porosity(space.n_cells)
    lam_c, lam_f = [], []
    for g, uc, uf in zip(space.groups, u_cell, u_face):
        if uc.shape != g.cq_w.shape + (2,) or uf.shape != g.fq_w.shape + (2,):
            raise InvalidArgumentError(
                "velocity samples do not line up with this space's quadrature; "
                "build both spaces with one shared exactness"
            )
        phic = phi[g.cell_ids]
        lam_c.append(dispersion_tensor(uc, phic[:, None], model))
        lam_f.append(dispersion_tensor(uf, phic[:, None, None], model))
    return lam_c, lam_f


def advective_derivative_matrices(
    space: HhoSpace, u_cell: list[np.ndarray], flux_face: list[np.ndarray]
) -> list[np.ndarray]:
    """Matrices (nc, ncb, n_loc) taking local dofs to the derivative's coefs.

    Row block solves the cell mass system for the polynomial whose moments
    equal the volume term plus the flux-weighted face differences.
    """
    ncb = space.ncb
    out = []
    for g, uc, fv in zip(space.groups, u_cell, flux_face):
        phi_k = g.phi_c[:, :, :ncb]
        trace_k = g.phi_cf[:, :, :, :ncb]
        vol = np.einsum(
            "cq,cqa,cqja,cqi->cij", g.cq_w, uc, g.grad_c[:, :, :ncb, :], phi_k
        )
        cell_face = -np.einsum("cfq,cfq,cfqj,cfqi->cij", g.fq_w, fv, trace_k, trace_k)
        face_cols = np.einsum("cfq,cfq,cfqm,cfqi->cifm", g.fq_w, fv, g.phi_ff, trace_k)
        b = np.concatenate(
            [vol + cell_face, face_cols.reshape(g.n_cells, ncb, -1)], axis=2
        )
        mcc = space.Mcc[g.cell_ids]
        out.append(np.linalg.solve(mcc, b))
    return out


def advection_reaction_matrices(
    space: HhoSpace,
    u_cell: list[np.ndarray],
    flux_face: list[np.ndarray],
    reaction: np.ndarray,
) -> list[np.ndarray]:
    """Local advection-reaction blocks (nc, n_loc, n_loc), test index first.

    Combines minus the pairing of the trial cell polynomial with the
    advective derivative of the test dofs, a per-cell reaction mass term,
    and the upwind penalty on face jumps against the negative flux part.
    """
    reaction = np.asarray(reaction, dtype=float)
    if reaction.shape != (space.n_cells,):
        raise InvalidArgumentError("reaction must be one coefficient per cell")
    ncb, nfb = space.ncb, space.nfb
    deriv = advective_derivative_matrices(space, u_cell, flux_face)
    out = []
    for g, gadv, fv in zip(space.groups, deriv, flux_face):
        n_loc = g.loc2glob.shape[1]
        amat = np.zeros((g.n_cells, n_loc, n_loc))
        mcc = space.Mcc[g.cell_ids]
        # -(trial cell polynomial, derivative of the test dofs): rows are the
        # test index, so the mass-weighted derivative block lands transposed.
        amat[:, :, :ncb] -= np.transpose(mcc @ gadv, (0, 2, 1))
        amat[:, :ncb, :ncb] += reaction[g.cell_ids, None, None] * mcc

        jumps = np.zeros(g.fq_w.shape + (n_loc,))
        jumps[..., :ncb] = -g.phi_cf[:, :, :, :ncb]
        for f in range(g.n_faces):
            jumps[:, f, :, ncb + f * nfb : ncb + (f + 1) * nfb] = g.phi_ff[:, f]
        neg = np.maximum(0.0, -fv)
        amat += np.einsum(
            "cfq,cfq,cfql,cfqm->clm", g.fq_w, neg, jumps, jumps, optimize=True
        )
        out.append(amat)
    return out


def concentration_rhs(
    space: HhoSpace,
    q_plus: np.ndarray,
    c_hat: float,
    porosity: np.ndarray,
    dt: float,
    c_n: HybridField,
) -> np.ndarray:
    """Cell loads of the injected mass plus the time-stepping history term."""
    q_plus = np.asarray(q_plus, dtype=float)
    porosity = np.asarray(porosity, dtype=float)
    vals = []
    for g, cv in zip(space.groups, space.cell_values(c_n)):
        src = q_plus[g.cell_ids, None] * c_hat
        vals.append(src + (2.0 * porosity[g.cell_ids, None] / dt) * cv)
    return space.cell_moments(vals)


@dataclass
class HalfStepResult:
    """Solved implicit concentration plus the pieces diagnostics reuse."""

    field: HybridField
    residual: float
    adv_mats: list[np.ndarray]
    diff_mats: list[np.ndarray]
    pinned: np.ndarray


def assemble_transport(
    space: HhoSpace,
    model: DispersionModel,
    u_cell: list[np.ndarray],
    u_face: list[np.ndarray],
    flux_face: list[np.ndarray],
    reaction: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Total, advection, and diffusion local blocks of one implicit solve."""
    lam_c, lam_f = dispersion_samples(space, model, u_cell, u_face)
    diff = local_diffusion_ops(space, lam_cell=lam_c, lam_face=lam_f)
    adv = advection_reaction_matrices(space, u_cell, flux_face, reaction)
    total = [d + a for d, a in zip(diff.amat, adv)]
    return total, adv, diff.amat


def solve_transport_system(
    space: HhoSpace,
    total: list[np.ndarray],
    adv: list[np.ndarray],
    diff: list[np.ndarray],
    rhs_cell: np.ndarray,
    pin_to: HybridField,
    tol: float = 1e-9,
) -> HalfStepResult:
    """Condense, solve, and verify one assembled transport system.

    Face dofs that appear in no equation (possible with zero molecular
    diffusion in a still region) are held at the ``pin_to`` values; every
    other dof must satisfy the assembled system to ``tol`` relative.
    """
    cond = static_condense(space, total, rhs_cell)
    prev_faces = pin_to.face.ravel()
    mat = cond.matrix
    row_mass = np.asarray(np.abs(mat).sum(axis=1)).ravel()
    pinned = row_mass == 0.0
    if pinned.any():
        free = np.flatnonzero(~pinned)
        x_face = prev_faces.copy()
        if free.size:
            rhs = cond.rhs - mat[:, np.flatnonzero(pinned)] @ prev_faces[pinned]
            x_face[free] = solve_direct(mat[free][:, free].tocsr(), rhs[free], tol=tol)
    else:
        x_face = solve_direct(mat, cond.rhs, tol=tol)
    field = cond.recover(x_face)

    full = apply_local(space, total, field)
    target = np.zeros(space.n_dofs)
    target[: space.n_cell_dofs] = rhs_cell.ravel()
    gap = full - target
    gap[space.n_cell_dofs :][pinned] = 0.0
    scale = max(np.linalg.norm(target), np.linalg.norm(full), 1e-300)
    residual = float(np.linalg.norm(gap)) / scale
    if residual > tol:
        raise SolverError(
            f"transport system residual {residual:.3e} exceeds {tol:.1e}",
            residual=residual,
        )
    return HalfStepResult(
        field=field, residual=residual, adv_mats=adv, diff_mats=diff, pinned=pinned
    )


def solve_concentration_half_step(
    space: HhoSpace,
    model: DispersionModel,
    u_cell: list[np.ndarray],
    u_face: list[np.ndarray],
    flux_face: list[np.ndarray],
    c_n: HybridField,
    dt: float,
    q_plus: np.ndarray,
    q_minus: np.ndarray,
    c_hat: float = 1.0,
    tol: float = 1e-9,
) -> HalfStepResult:
    """Advance the concentration to the midpoint of one step of length dt."""
    if dt <= 0.0:
        raise InvalidArgumentError("time step must be positive")
    space.check_field(c_n)
    phi = model.cell_porosity(space.n_cells)
    reaction = 2.0 * phi / dt + np.asarray(q_minus, dtype=float)
    total, adv, diff = assemble_transport(
        space, model, u_cell, u_face, flux_face, reaction
    )
    rhs_cell = concentration_rhs(space, q_plus, c_hat, phi, dt, c_n)
    return solve_transport_system(space, total, adv, diff, rhs_cell, c_n, tol=tol)


def crank_nicolson_extrapolate(c_half: HybridField, c_n: HybridField) -> HybridField:
    """End-of-step value whose midpoint with the old state is the half step."""
    return field_lincomb([(2.0, c_half), (-1.0, c_n)])


def coercivity_slack(
    space: HhoSpace,
    adv_mats: list[np.ndarray],
    flux_face: list[np.ndarray],
    porosity: np.ndarray,
    dt: float,
    v: HybridField,
) -> tuple[float, float]:
    """Advection-reaction coercivity gap for one test field.

    Returns (slack, scale) where slack is the quadratic form minus the
    guaranteed lower bound: the time-stepping mass term plus half the
    absolute-flux-weighted face jumps. Nonnegative slack (up to round-off)
    for solution-grade fluxes is the discrete stability mechanism.
    """
    porosity = np.asarray(porosity, dtype=float)
    ncb, nfb = space.ncb, space.nfb
    quad = 0.0
    bound = 0.0
    for g, amat, fv, loc in zip(
        space.groups, adv_mats, flux_face, space.gather_local(v)
    ):
        quad += float(np.einsum("cl,clm,cm->", loc, amat, loc))
        mcc = space.Mcc[g.cell_ids]
        cellpart = loc[:, :ncb]
        bound += float(
            np.einsum(
                "c,ci,cij,cj->",
                2.0 * porosity[g.cell_ids] / dt,
                cellpart,
                mcc,
                cellpart,
            )
        )
        jump_vals = np.einsum("cfqj,cfj->cfq", g.phi_ff, v.face[g.face_ids])
        jump_vals -= np.einsum("cfqi,ci->cfq", g.phi_cf[:, :, :, :ncb], cellpart)
        bound += 0.5 * float(np.einsum("cfq,cfq,cfq->", g.fq_w, np.abs(fv), jump_vals**2))
    return quad - bound, max(abs(quad), abs(bound), 1e-300)


def energy_slack(
    space: HhoSpace,
    porosity: np.ndarray,
    dt: float,
    c_half: HybridField,
    c_n: HybridField,
    q_plus: np.ndarray,
    c_hat: float,
) -> tuple[float, float]:
    """Per-step energy inequality gap for a solved midpoint concentration.

    The time-difference pairing (2 phi / dt)(c_half - c_n, c_half) may not
    exceed the injected-source pairing (q_plus c_hat, c_half); the returned
    slack is rhs - lhs with a scale for relative comparison.
    """
    porosity = np.asarray(porosity, dtype=float)
    diff = field_lincomb([(1.0, c_half), (-1.0, c_n)])
    lhs = float(
        np.einsum(
            "c,ci,cij,cj->",
            2.0 * porosity / dt,
            diff.cell,
            space.Mcc,
            c_half.cell,
        )
    )
    q_plus = np.asarray(q_plus, dtype=float)
    rhs = 0.0
    for g, cv in zip(space.groups, space.cell_values(c_half)):
        rhs += float(np.einsum("c,cq,cq->", q_plus[g.cell_ids] * c_hat, g.cq_w, cv))
    # both sides cancel to round-off in source-free steady states; the mass
    # term keeps the scale tied to the size of the state itself
    mass = float(
        np.einsum(
            "c,ci,cij,cj->", 2.0 * porosity / dt, c_half.cell, space.Mcc, c_half.cell
        )
    )
    return rhs - lhs, max(abs(lhs), abs(rhs), abs(mass), 1e-300)
