"""Local operator tests against hand-derived and closed-form oracles.

The unit-square oracle below is worked out by hand: with cell value u and
face values (l, r, b, t) the degree-0 reconstruction on the unit square has
gradient (r - l, t - b) and mean u, the face defects are
u + (r - l)/2 - r (right), u - (r - l)/2 - l (left) and the two analogues in
y, and the local energy is the gradient energy plus the sum of squared
defects. Exactness of the reconstruction on full-degree polynomials is
checked against independent cellwise L2 projections.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhoflow.basis import l2_project
from hhoflow.errors import ConditioningError, InvalidArgumentError
from hhoflow.hho import (
    HhoSpace,
    HybridField,
    assemble_global,
    assemble_rhs,
    field_lincomb,
    local_diffusion_ops,
    static_condense,
    tensor_at,
)
from hhoflow.mesh import build_cartesian_mesh, load_mesh


def identity_tensor(pts):
    return np.tile(np.eye(2), (len(pts), 1, 1))


def constant_tensor(mat):
    mat = np.asarray(mat, dtype=float)

    def fn(pts):
        return np.tile(mat, (len(pts), 1, 1))

    return fn


def pentagon_mesh(tmp_path):
    pts = [(0.0, 0.0), (2.0, 0.0), (2.6, 1.3), (1.0, 2.3), (-0.4, 1.2)]
    lines = ["polymesh2d 1", f"vertices {len(pts)}"]
    lines += [f"{x!r} {y!r}" for x, y in pts]
    lines += ["cells 1", "0 1 2 3 4"]
    path = tmp_path / "pentagon.msh"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return load_mesh(path)


def set_constant_face_value(space, field, center, value):
    """Assign a constant face polynomial on the face nearest to center."""
    d = np.linalg.norm(space.mesh.face_centers - np.asarray(center), axis=1)
    field.face[int(np.argmin(d)), 0] = value


def test_unit_square_degree0_hand_values():
    mesh = build_cartesian_mesh(1, 1, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 0)
    field = space.zero_field()
    field.cell[0, 0] = 1.0
    set_constant_face_value(space, field, (0.0, 0.5), 0.0)  # left
    set_constant_face_value(space, field, (1.0, 0.5), 2.0)  # right
    set_constant_face_value(space, field, (0.5, 0.0), 3.0)  # bottom
    set_constant_face_value(space, field, (0.5, 1.0), 5.0)  # top

    ops = local_diffusion_ops(space, fn=identity_tensor)
    loc = space.gather_local(field)[0]
    energy = float(loc[0] @ ops.amat[0][0] @ loc[0])
    # gradient energy |(2, 2)|^2 * area + defects 0, 0, (-3)^2, (-3)^2
    assert energy == pytest.approx(26.0, rel=1e-12)

    grads = ops.gradient(0, loc)
    np.testing.assert_allclose(grads, 2.0, rtol=0, atol=1e-12)
    coefs = np.einsum("il,l->i", ops.recon[0][0], loc[0])
    assert coefs[0] == pytest.approx(1.0, abs=1e-13)  # mean matches the cell value


@pytest.mark.parametrize("m", [0, 1, 2])
@pytest.mark.parametrize("shape", ["cartesian", "pentagon"])
def test_reconstruction_exact_on_full_degree(m, shape, tmp_path):
    if shape == "cartesian":
        mesh = build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 1.0))
    else:
        mesh = pentagon_mesh(tmp_path)
    space = HhoSpace(mesh, m)
    rng = np.random.default_rng(m + 17)
    from hhoflow.basis import cell_exponents

    exps = cell_exponents(m + 1)
    coef = rng.uniform(-1.0, 1.0, size=len(exps))

    def p(pts):
        pts = np.asarray(pts)
        return sum(
            c * pts[:, 0] ** r * pts[:, 1] ** s for c, (r, s) in zip(coef, exps)
        )

    lam = np.array([[2.0, 0.5], [0.5, 1.0]])
    ops = local_diffusion_ops(space, fn=constant_tensor(lam))
    interp = space.interpolate(p)
    locs = space.gather_local(interp)
    for g, rec, loc in zip(space.groups, ops.recon, locs):
        got = np.einsum("cil,cl->ci", rec, loc)
        for pos, cid in enumerate(g.cell_ids):
            expected = l2_project(p, mesh.cell_geometry(int(cid)), m + 1).coefficients
            np.testing.assert_allclose(got[pos], expected, rtol=1e-8, atol=1e-10)


def test_consistency_identity_against_quadrature():
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    m = 1
    space = HhoSpace(mesh, m)
    lam = np.array([[2.0, 0.5], [0.5, 1.0]])
    ops = local_diffusion_ops(space, fn=constant_tensor(lam))

    def p(pts):
        pts = np.asarray(pts)
        return 0.4 + pts[:, 0] - 2.0 * pts[:, 1] + 0.5 * pts[:, 0] ** 2 - pts[:, 0] * pts[:, 1]

    def grad_p(pts):
        pts = np.asarray(pts)
        gx = 1.0 + pts[:, 0] - pts[:, 1]
        gy = -2.0 - pts[:, 0]
        return np.stack([gx, gy], axis=-1)

    interp = space.interpolate(p)
    rng = np.random.default_rng(3)
    other = HybridField(
        m,
        rng.standard_normal((space.n_cells, space.ncb)),
        rng.standard_normal((space.n_faces, space.nfb)),
    )
    u_locs = space.gather_local(interp)
    v_locs = space.gather_local(other)
    for gi, g in enumerate(space.groups):
        lhs = np.einsum("cl,clm,cm->c", v_locs[gi], ops.amat[gi], u_locs[gi])
        grads_v = ops.gradient(gi, v_locs[gi])
        gp = grad_p(g.cq_pts.reshape(-1, 2)).reshape(g.cq_pts.shape)
        rhs = np.einsum("cq,cqa,ab,cqb->c", g.cq_w, gp, lam, grads_v)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-11)


def test_constants_span_the_kernel():
    mesh = build_cartesian_mesh(2, 3, (0.0, 0.0, 2.0, 1.0))
    space = HhoSpace(mesh, 1)
    ops = local_diffusion_ops(space, fn=identity_tensor)
    ones = space.interpolate(lambda pts: np.ones(len(pts)))
    locs = space.gather_local(ones)
    for gi, g in enumerate(space.groups):
        act = np.einsum("clm,cm->cl", ops.amat[gi], locs[gi])
        np.testing.assert_allclose(act, 0.0, atol=1e-12)
        for a in ops.amat[gi]:
            np.testing.assert_allclose(a, a.T, atol=1e-12 * np.abs(a).max())
            vals = np.linalg.eigvalsh(a)
            assert vals.min() >= -1e-11 * vals.max()
            # exactly the constant interpolant is flat
            assert (vals < 1e-9 * vals.max()).sum() == 1


def test_scalar_tensor_scales_energy_not_reconstruction():
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    base = local_diffusion_ops(space, fn=identity_tensor)
    scaled = local_diffusion_ops(space, fn=constant_tensor(5.0 * np.eye(2)))
    for r0, r1, a0, a1 in zip(base.recon, scaled.recon, base.amat, scaled.amat):
        np.testing.assert_allclose(r1, r0, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(a1, 5.0 * a0, rtol=1e-12, atol=1e-12)


def test_zero_tensor_cell_yields_zero_blocks():
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    lam_cell = [tensor_at(identity_tensor, g.cq_pts) for g in space.groups]
    lam_face = [tensor_at(identity_tensor, g.fq_pts) for g in space.groups]
    g0 = space.groups[0]
    pos = int(np.flatnonzero(g0.cell_ids == 0)[0])
    lam_cell[0][pos] = 0.0
    lam_face[0][pos] = 0.0
    ops = local_diffusion_ops(space, lam_cell=lam_cell, lam_face=lam_face)
    assert np.all(ops.amat[0][pos] == 0.0)
    assert np.all(ops.recon[0][pos] == 0.0)
    others = np.delete(np.arange(g0.n_cells), pos)
    assert all(np.abs(ops.amat[0][i]).max() > 0.0 for i in others)


def test_rank_deficient_tensor_raises_with_cell():
    mesh = build_cartesian_mesh(2, 1, (0.0, 0.0, 2.0, 1.0))
    space = HhoSpace(mesh, 0)
    with pytest.raises(ConditioningError) as err:
        local_diffusion_ops(space, fn=constant_tensor([[1.0, 0.0], [0.0, 0.0]]))
    assert err.value.cell_id is not None


def random_spd_locals(space, rng):
    mats = []
    for g in space.groups:
        n_loc = g.loc2glob.shape[1]
        r = rng.standard_normal((g.n_cells, n_loc, n_loc))
        mats.append(np.einsum("cki,ckj->cij", r, r) + n_loc * np.eye(n_loc))
    return mats


def test_condensation_matches_full_solve():
    from hhoflow.linsolve import solve_direct

    mesh = build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    rng = np.random.default_rng(7)
    mats = random_spd_locals(space, rng)
    cell_rhs = rng.standard_normal((space.n_cells, space.ncb))
    face_rhs = rng.standard_normal((space.n_faces, space.nfb))

    full = assemble_global(space, mats)
    b = assemble_rhs(space, cell_rhs, face_rhs)
    dense = np.linalg.solve(full.toarray(), b)

    cond = static_condense(space, mats, cell_rhs, face_rhs)
    assert cond.matrix.shape == (space.n_face_dofs, space.n_face_dofs)
    x_face = solve_direct(cond.matrix, cond.rhs)
    rebuilt = cond.recover(x_face)
    np.testing.assert_allclose(space.to_vector(rebuilt), dense, rtol=1e-10, atol=1e-12)


def test_condensation_matches_full_constrained_solve():
    from hhoflow.linsolve import solve_with_mean_constraint

    mesh = build_cartesian_mesh(3, 3, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    rng = np.random.default_rng(11)
    mats = random_spd_locals(space, rng)
    cell_rhs = rng.standard_normal((space.n_cells, space.ncb))
    gcell = rng.standard_normal((space.n_cells, space.ncb))
    target = 0.3

    full = assemble_global(space, mats).toarray()
    gfull = assemble_rhs(space, gcell)
    bordered = np.zeros((space.n_dofs + 1, space.n_dofs + 1))
    bordered[: space.n_dofs, : space.n_dofs] = full
    bordered[: space.n_dofs, -1] = gfull
    bordered[-1, : space.n_dofs] = gfull
    ref = np.linalg.solve(
        bordered, np.concatenate([assemble_rhs(space, cell_rhs), [target]])
    )

    cond = static_condense(space, mats, cell_rhs)
    gt, d, c0 = cond.constraint(gcell)
    x_face, lam = solve_with_mean_constraint(
        cond.matrix, gt, d, cond.rhs, target=target - c0
    )
    rebuilt = cond.recover(x_face, lam=lam, gcell=gcell)
    np.testing.assert_allclose(space.to_vector(rebuilt), ref[:-1], rtol=1e-10, atol=1e-11)
    assert lam == pytest.approx(ref[-1], rel=1e-9, abs=1e-11)


def test_condense_singular_cell_block_raises():
    mesh = build_cartesian_mesh(2, 1, (0.0, 0.0, 2.0, 1.0))
    space = HhoSpace(mesh, 0)
    rng = np.random.default_rng(0)
    mats = random_spd_locals(space, rng)
    mats[0][1, : space.ncb, : space.ncb] = 0.0
    with pytest.raises(ConditioningError) as err:
        static_condense(space, mats, np.zeros((space.n_cells, space.ncb)))
    assert err.value.cell_id == 1


def test_interpolate_and_reductions():
    mesh = build_cartesian_mesh(4, 4, (0.0, 0.0, 2.0, 3.0))
    space = HhoSpace(mesh, 1)

    def f(pts):
        pts = np.asarray(pts)
        return 1.0 + 2.0 * pts[:, 0] - pts[:, 1]

    field = space.interpolate(f)
    assert space.integral(field) == pytest.approx(9.0, rel=1e-12)
    np.testing.assert_allclose(
        space.cell_averages(field), f(mesh.cell_centroids), rtol=1e-12
    )
    ones = space.interpolate(lambda pts: np.ones(len(pts)))
    assert space.l2_norm(ones) == pytest.approx(np.sqrt(6.0), rel=1e-12)
    probes = np.array([[0.3, 0.4], [1.7, 2.9]])
    np.testing.assert_allclose(space.evaluate(field, probes), f(probes), rtol=1e-12)


def test_field_lincomb_and_vector_roundtrip():
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    rng = np.random.default_rng(5)
    a = space.from_vector(rng.standard_normal(space.n_dofs))
    b = space.from_vector(rng.standard_normal(space.n_dofs))
    combo = field_lincomb([(1.5, a), (-0.5, b)])
    np.testing.assert_allclose(
        space.to_vector(combo), 1.5 * space.to_vector(a) - 0.5 * space.to_vector(b)
    )
    with pytest.raises(InvalidArgumentError):
        space.from_vector(np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        field_lincomb([])


def test_operator_build_is_deterministic():
    mesh = build_cartesian_mesh(3, 2, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    ops1 = local_diffusion_ops(space, fn=constant_tensor([[3.0, 1.0], [1.0, 2.0]]))
    ops2 = local_diffusion_ops(space, fn=constant_tensor([[3.0, 1.0], [1.0, 2.0]]))
    for a1, a2 in zip(ops1.amat, ops2.amat):
        assert np.array_equal(a1, a2)
    for r1, r2 in zip(ops1.recon, ops2.recon):
        assert np.array_equal(r1, r2)


@settings(max_examples=12, deadline=None)
@given(
    lam1=st.floats(min_value=0.1, max_value=10.0),
    lam2=st.floats(min_value=0.1, max_value=10.0),
    angle=st.floats(min_value=0.0, max_value=3.1),
)
def test_reconstruction_exact_for_random_spd_tensor(lam1, lam2, angle):
    mesh = build_cartesian_mesh(2, 2, (0.0, 0.0, 1.0, 1.0))
    space = HhoSpace(mesh, 1)
    q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    lam = q @ np.diag([lam1, lam2]) @ q.T

    def p(pts):
        pts = np.asarray(pts)
        return pts[:, 0] ** 2 - 0.5 * pts[:, 0] * pts[:, 1] + 2.0 * pts[:, 1] - 0.7

    ops = local_diffusion_ops(space, fn=constant_tensor(lam))
    interp = space.interpolate(p)
    locs = space.gather_local(interp)
    for g, rec, loc in zip(space.groups, ops.recon, locs):
        got = np.einsum("cil,cl->ci", rec, loc)
        for pos, cid in enumerate(g.cell_ids):
            expected = l2_project(p, mesh.cell_geometry(int(cid)), 2).coefficients
            np.testing.assert_allclose(got[pos], expected, rtol=1e-7, atol=1e-9)
