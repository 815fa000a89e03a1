"""Flux extraction checks, anchored by a dense closed-form oracle.

The oracle rebuilds the flux of a single cell from first principles: the
normal trace of the reconstructed velocity plus the adjoint image of the
boundary stabilisation residual, assembled as dense matrices over the stacked
face bases. The adjoint is taken with the per-face weights folded into its
argument; on a cell whose weights differ between faces (a 2x1 rectangle with
an anisotropic tensor) this is the only composition that reproduces the
Gram-solve fluxes, while on the unit square with identity tensor the weights
are uniform and the two compositions coincide. The balance identity behind
the fluxes is algebraic, so it must hold for arbitrary dof vectors; mass
balance and antisymmetry, by contrast, are earned only by actual pressure
solutions, and the tests exercise both sides of that line.
"""

import numpy as np
import pytest

from hhoflow.darcy import (
    build_darcy,
    compute_cell_velocity,
    compute_face_fluxes,
    conservation_residual,
)
from hhoflow.hho import HhoSpace, local_diffusion_ops
from hhoflow.mesh import build_cartesian_mesh, load_mesh
from hhoflow.pressure import pressure_rhs, solve_pressure


def constant_samples(space, tensor):
    tensor = np.asarray(tensor, dtype=float)
    lam_c = [np.tile(tensor, g.cq_w.shape + (1, 1)) for g in space.groups]
    lam_f = [np.tile(tensor, g.fq_w.shape + (1, 1)) for g in space.groups]
    return lam_c, lam_f


def pentagon(tmp_path):
    pts = [(0.0, 0.0), (2.0, 0.0), (2.6, 1.3), (1.0, 2.3), (-0.4, 1.2)]
    body = ["polymesh2d 1", f"vertices {len(pts)}"]
    body += [f"{x!r} {y!r}" for x, y in pts]
    body += ["cells 1", "0 1 2 3 4"]
    path = tmp_path / "pentagon.msh"
    path.write_text("\n".join(body) + "\n", encoding="utf-8")
    return load_mesh(path)


def random_field(space, seed):
    rng = np.random.default_rng(seed)
    field = space.zero_field()
    field.cell[:] = rng.normal(size=field.cell.shape)
    field.face[:] = rng.normal(size=field.face.shape)
    return field


def closed_form_fluxes(space, ops, field, weight_inside=True):
    """Single-cell flux coefficients from the adjoint-based formula."""
    g = space.groups[0]
    ncb, nfb, nf = space.ncb, space.nfb, g.n_faces
    loc = space.gather_local(field)[0][0]
    rec = ops.recon[0][0]
    lamf = ops.lam_face[0][0]
    mff = g.mff[0]
    w_q, phi, phif, gradf = g.cq_w[0], g.phi_c[0], g.phi_cf[0], g.grad_cf[0]

    r1 = rec.copy()
    r1[0] = 0.0
    mcc = np.einsum("q,qi,qj->ij", w_q, phi[:, :ncb], phi[:, :ncb])
    mcr = np.einsum("q,qi,qj->ij", w_q, phi[:, :ncb], phi)
    proj_cell = np.linalg.solve(mcc, mcr)

    def corrected_traces(cell_coefs, face_coefs_flat):
        # u_T + (I - pi_T) r(u), sampled on every face of the cell
        coefs = r1 @ np.concatenate([cell_coefs, face_coefs_flat])
        vals = np.einsum("fqi,i->fq", phif, coefs)
        vals -= np.einsum("fqi,i->fq", phif[:, :, :ncb], proj_cell @ coefs)
        return vals + np.einsum("fqi,i->fq", phif[:, :, :ncb], cell_coefs)

    def project_faces(vals):
        mom = np.einsum("fq,fq,fqj->fj", g.fq_w[0], vals, g.phi_ff[0])
        return np.linalg.solve(mff, mom[..., None])[..., 0]

    boundary_op = np.empty((nf * nfb, nf * nfb))
    for f in range(nf):
        for j in range(nfb):
            xi = np.zeros((nf, nfb))
            xi[f, j] = 1.0
            vals = np.einsum("fqj,fj->fq", g.phi_ff[0], xi)
            vals -= corrected_traces(np.zeros(ncb), xi.ravel())
            boundary_op[:, f * nfb + j] = project_faces(vals).ravel()

    gram = np.zeros((nf * nfb, nf * nfb))
    for f in range(nf):
        gram[f * nfb : (f + 1) * nfb, f * nfb : (f + 1) * nfb] = mff[f]
    n_lam_n = np.einsum("fa,fqab,fb->fq", g.normals[0], lamf, g.normals[0])
    weights = np.kron(np.diag(n_lam_n.max(axis=1) / g.face_h[0]), np.eye(nfb))

    grad_r = np.einsum("fqia,i->fqa", gradf, rec @ loc)
    velocity_part = project_faces(
        -np.einsum("fa,fqab,fqb->fq", g.normals[0], lamf, grad_r)
    )
    trace = np.einsum("fqj,fj->fq", g.phi_ff[0], field.face[g.face_ids[0]])
    rho = project_faces(trace - corrected_traces(loc[:ncb], loc[ncb:])).ravel()

    if weight_inside:
        stab_part = -np.linalg.solve(gram, boundary_op.T @ (gram @ (weights @ rho)))
    else:
        stab_part = -weights @ np.linalg.solve(gram, boundary_op.T @ (gram @ rho))
    return velocity_part + stab_part.reshape(nf, nfb)


def test_zero_pressure_gives_zero_everything():
    mesh = build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 2)
    ops = local_diffusion_ops(space, *constant_samples(space, np.eye(2)))
    darcy = build_darcy(space, ops, space.zero_field())
    for arr in darcy.u_cell + darcy.flux_coefs:
        assert np.abs(arr).max() == 0.0
    diag = conservation_residual(darcy, ops)
    assert diag.conservation == 0.0
    assert diag.antisymmetry == 0.0
    assert diag.mass_balance == 0.0


def test_affine_pressure_gives_constant_flux(tmp_path):
    # p = x with identity tensor: U = (-1, 0) everywhere and each face flux
    # is the constant -n_x; reconstruction exactness kills the correction.
    for mesh in (build_cartesian_mesh(1, 1, (0.0, 0.0, 1.0, 1.0)), pentagon(tmp_path)):
        space = HhoSpace(mesh, 2)
        ops = local_diffusion_ops(space, *constant_samples(space, np.eye(2)))
        field = space.interpolate(lambda p: p[:, 0])
        darcy = build_darcy(space, ops, field)
        for arr in darcy.u_cell:
            np.testing.assert_allclose(arr[..., 0], -1.0, atol=1e-12)
            np.testing.assert_allclose(arr[..., 1], 0.0, atol=1e-12)
        g = space.groups[0]
        lam = darcy.flux_coefs[0]
        np.testing.assert_allclose(lam[0, :, 0], -g.normals[0, :, 0], atol=1e-12)
        np.testing.assert_allclose(lam[0, :, 1:], 0.0, atol=1e-12)
        diag = conservation_residual(darcy, ops)
        assert diag.conservation <= 1e-9
        assert diag.mass_balance <= 1e-9


@pytest.mark.parametrize(
    "k,bbox,tensor",
    [
        (0, (0.0, 0.0, 1.0, 1.0), np.eye(2)),
        (1, (0.0, 0.0, 1.0, 1.0), np.eye(2)),
        (1, (0.0, 0.0, 2.0, 1.0), np.array([[2.0, 0.5], [0.5, 1.0]])),
    ],
)
def test_closed_form_flux_oracle(k, bbox, tensor):
    mesh = build_cartesian_mesh(1, 1, bbox)
    space = HhoSpace(mesh, 2 * k, exactness=4 * k + 2)
    ops = local_diffusion_ops(space, *constant_samples(space, tensor))
    field = random_field(space, seed=11 + k)
    alg5 = build_darcy(space, ops, field).flux_coefs[0][0]
    scale = np.abs(alg5).max()
    oracle = closed_form_fluxes(space, ops, field, weight_inside=True)
    assert np.abs(alg5 - oracle).max() <= 1e-10 * scale


def test_uniform_weights_collapse_the_adjoint_orderings():
    # Unit square, identity tensor: every face carries the same weight, so
    # weighting before or after the adjoint is the same map. The rectangle
    # with unequal face lengths separates the two; only the weight-inside
    # composition reproduces the Gram-solve fluxes there.
    mesh = build_cartesian_mesh(1, 1, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 2, exactness=6)
    ops = local_diffusion_ops(space, *constant_samples(space, np.eye(2)))
    field = random_field(space, seed=3)
    a = closed_form_fluxes(space, ops, field, weight_inside=True)
    b = closed_form_fluxes(space, ops, field, weight_inside=False)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()

    mesh = build_cartesian_mesh(1, 1, (0.0, 0.0, 2.0, 1.0))
    space = HhoSpace(mesh, 2, exactness=6)
    ops = local_diffusion_ops(
        space, *constant_samples(space, np.array([[2.0, 0.5], [0.5, 1.0]]))
    )
    field = random_field(space, seed=4)
    alg5 = build_darcy(space, ops, field).flux_coefs[0][0]
    scale = np.abs(alg5).max()
    inside = closed_form_fluxes(space, ops, field, weight_inside=True)
    outside = closed_form_fluxes(space, ops, field, weight_inside=False)
    assert np.abs(alg5 - inside).max() <= 1e-10 * scale
    assert np.abs(alg5 - outside).max() > 1e-6 * scale


def test_balance_identity_holds_for_arbitrary_dofs(tmp_path):
    # The identity defining the fluxes is algebraic, so any dof vector
    # satisfies it; mass balance is not, and random data must violate it.
    tensor = np.array([[3.0, 0.7], [0.7, 1.5]])
    for mesh in (build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 1.0)), pentagon(tmp_path)):
        space = HhoSpace(mesh, 2)
        ops = local_diffusion_ops(space, *constant_samples(space, tensor))
        field = random_field(space, seed=99)
        darcy = build_darcy(space, ops, field)
        diag = conservation_residual(darcy, ops)
        assert diag.conservation <= 1e-9
        assert diag.mass_balance > 1e-6


def test_well_solution_fluxes_balance():
    mesh = build_cartesian_mesh(8, 8, (0.0, 0.0, 1000.0, 1000.0))
    space = HhoSpace(mesh, 2)
    qp = np.zeros(mesh.n_cells)
    qm = np.zeros(mesh.n_cells)
    qp[-1] = 30.0 / mesh.cell_areas[-1]
    qm[0] = 30.0 / mesh.cell_areas[0]
    rhs = pressure_rhs(space, qp, qm)
    lam_c, lam_f = constant_samples(space, 80.0 * np.eye(2))
    state = solve_pressure(space, lam_c, lam_f, rhs)
    darcy = build_darcy(space, state.ops, state.field)
    diag = conservation_residual(darcy, state.ops, q_plus=qp, q_minus=qm)
    assert diag.conservation <= 1e-9
    assert diag.antisymmetry <= 1e-9
    assert diag.mass_balance <= 1e-9
    outflow = darcy.flux_integrals()
    assert outflow[ant := mesh.n_cells - 1] == pytest.approx(30.0, abs=3e-8), ant
    assert outflow[0] == pytest.approx(-30.0, abs=3e-8)


def test_velocity_invariant_under_joint_scaling():
    # Doubling kappa while halving the pressure leaves U and the fluxes
    # fixed: the velocity is bilinear and the stabilisation weight doubles
    # exactly as its argument halves.
    mesh = build_cartesian_mesh(4, 4, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 2)
    ops1 = local_diffusion_ops(space, *constant_samples(space, np.eye(2)))
    ops2 = local_diffusion_ops(space, *constant_samples(space, 2.0 * np.eye(2)))
    field = random_field(space, seed=21)
    half = field.copy()
    half.cell *= 0.5
    half.face *= 0.5
    one = build_darcy(space, ops1, field)
    two = build_darcy(space, ops2, half)
    for a, b in zip(one.u_cell, two.u_cell):
        np.testing.assert_allclose(b, a, atol=1e-10 * max(np.abs(a).max(), 1.0))
    for a, b in zip(one.flux_coefs, two.flux_coefs):
        np.testing.assert_allclose(b, a, atol=1e-10 * max(np.abs(a).max(), 1.0))


def test_per_cell_entry_points_match_batched(tmp_path):
    mesh = pentagon(tmp_path)
    space = HhoSpace(mesh, 2)
    ops = local_diffusion_ops(
        space, *constant_samples(space, np.array([[2.0, 0.5], [0.5, 1.0]]))
    )
    field = random_field(space, seed=5)
    darcy = build_darcy(space, ops, field)
    loc = space.gather_local(field)[0][0]
    lam = compute_face_fluxes(space, ops, 0, loc)
    np.testing.assert_allclose(lam, darcy.flux_coefs[0][0], atol=1e-13 * np.abs(lam).max())
    u_c, u_f = compute_cell_velocity(space, ops, 0, loc)
    np.testing.assert_allclose(u_c, darcy.u_cell[0][0], atol=1e-13)
    np.testing.assert_allclose(u_f, darcy.u_face[0][0], atol=1e-13)
