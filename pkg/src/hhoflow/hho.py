"""Hybrid polynomial spaces on polygonal meshes and local diffusion operators.

A hybrid unknown of degree m carries one bivariate polynomial of total degree
<= m per cell plus one univariate polynomial of degree <= m per face. Each
cell reconstructs from its own and its faces' polynomials a potential of
degree m+1 whose gradient is consistent with the face data; the local
bilinear form adds a face penalisation that vanishes identically whenever the
unknown interpolates a single polynomial of degree m+1, so the scheme keeps
the optimal order on arbitrary polygonal cells.

Cells are batched into groups with equal face counts so every per-cell kernel
is a single vectorised contraction. A group caches quadrature nodes, basis
values and gradients once per (mesh, degree, exactness) triple; operator
rebuilds with new diffusion tensors (which happen every time step in the
coupled model) only pay for the contractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .basis import (
    cell_space_dimension,
    face_coordinate_values,
    make_cell_basis,
    monomial_gradients,
    monomial_values,
)
from .errors import ConditioningError, InvalidArgumentError
from .mesh import Mesh, locate_cell
from .quadrature import segment_rule, triangle_rule

TensorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CellGroup:
    """Batched geometry and basis tables for all cells with one face count.

    Shapes use nc = cells in the group, nf = faces per cell, nQ = volume
    quadrature nodes per cell, q = nodes per face, nrb = dim P^{m+1}(T),
    ncb = dim P^m(T), nfb = m + 1 and n_loc = ncb + nf * nfb.
    """

    cell_ids: np.ndarray  # (nc,)
    face_ids: np.ndarray  # (nc, nf) global face ids in loop order
    face_sign: np.ndarray  # (nc, nf) +1 where the cell owns the face, else -1
    normals: np.ndarray  # (nc, nf, 2) outward unit normals
    face_h: np.ndarray  # (nc, nf) face lengths
    areas: np.ndarray  # (nc,)
    cq_pts: np.ndarray  # (nc, nQ, 2) volume quadrature nodes
    cq_w: np.ndarray  # (nc, nQ)
    fq_pts: np.ndarray  # (nc, nf, q, 2) face quadrature nodes (face order)
    fq_w: np.ndarray  # (nc, nf, q)
    phi_c: np.ndarray  # (nc, nQ, nrb) cell basis values, degree m+1
    grad_c: np.ndarray  # (nc, nQ, nrb, 2)
    phi_cf: np.ndarray  # (nc, nf, q, nrb) cell basis traces on faces
    grad_cf: np.ndarray  # (nc, nf, q, nrb, 2)
    phi_ff: np.ndarray  # (nc, nf, q, nfb) face basis values
    mff: np.ndarray  # (nc, nf, nfb, nfb) face Gram matrices
    loc2glob: np.ndarray  # (nc, n_loc) global dof indices, cell block first

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def n_faces(self) -> int:
        return self.face_ids.shape[1]


@dataclass
class HybridField:
    """Coefficient arrays of one hybrid unknown: (C, ncb) cells, (F, nfb) faces."""

    degree: int
    cell: np.ndarray
    face: np.ndarray

    def copy(self) -> "HybridField":
        return HybridField(self.degree, self.cell.copy(), self.face.copy())


def field_lincomb(terms: Sequence[tuple[float, HybridField]]) -> HybridField:
    """Linear combination sum(a * f) of hybrid fields of equal degree."""
    if not terms:
        raise InvalidArgumentError("empty linear combination")
    degree = terms[0][1].degree
    cell = np.zeros_like(terms[0][1].cell)
    face = np.zeros_like(terms[0][1].face)
    for a, f in terms:
        if f.degree != degree:
            raise InvalidArgumentError("mixed degrees in linear combination")
        cell += a * f.cell
        face += a * f.face
    return HybridField(degree, cell, face)


class HhoSpace:
    """Hybrid space of degree m over a mesh, with cached quadrature tables.

    ``exactness`` is the polynomial degree integrated exactly by the shared
    volume and face rules; it defaults to 2(m+1), the minimum the local
    operators need, and is only ever raised by the argument. Two spaces built
    on one mesh with equal exactness share identical quadrature nodes, which
    lets coupled equations exchange pointwise data without interpolation.
    """

    def __init__(self, mesh: Mesh, degree: int, exactness: int | None = None):
        if degree < 0:
            raise InvalidArgumentError(f"hybrid degree must be nonnegative, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.ncb = cell_space_dimension(degree)
        self.nrb = cell_space_dimension(degree + 1)
        self.nfb = degree + 1
        base = 2 * (degree + 1)
        self.exactness = base if exactness is None else max(base, int(exactness))
        self.n_cells = mesh.n_cells
        self.n_faces = mesh.n_faces
        self.n_cell_dofs = self.n_cells * self.ncb
        self.n_face_dofs = self.n_faces * self.nfb
        self.n_dofs = self.n_cell_dofs + self.n_face_dofs

        self._build_face_tables()
        self._build_groups()
        self._build_mass()

    # -- construction -------------------------------------------------------

    def _build_face_tables(self) -> None:
        mesh, deg = self.mesh, self.exactness
        q = len(segment_rule(deg, np.array([[0.0, 0.0], [1.0, 0.0]])))
        F = self.n_faces
        self.face_qp = np.empty((F, q, 2))
        self.face_qw = np.empty((F, q))
        for f in range(F):
            ends = mesh.vertices[list(mesh.faces[f].vertex_ids)]
            rule = segment_rule(deg, ends)
            self.face_qp[f] = rule.nodes
            self.face_qw[f] = rule.weights
        self.face_phi = face_coordinate_values(
            self.face_qp,
            mesh.face_centers[:, None, :],
            mesh.face_ref_points[:, None, :],
            mesh.face_lengths[:, None],
            self.degree,
        )  # (F, q, nfb)
        self.Mff = np.einsum("fq,fqi,fqj->fij", self.face_qw, self.face_phi, self.face_phi)

    def _build_groups(self) -> None:
        mesh = self.mesh
        by_count: dict[int, list[int]] = {}
        for c in range(self.n_cells):
            by_count.setdefault(len(mesh.cells[c].face_ids), []).append(c)

        groups = []
        for nf in sorted(by_count):
            gids = np.array(by_count[nf], dtype=int)
            nc = len(gids)
            face_ids = np.array([mesh.cells[c].face_ids for c in gids], dtype=int)
            owner = mesh.face_cells[face_ids, 0] == gids[:, None]
            face_sign = np.where(owner, 1.0, -1.0)
            normals = mesh.face_normals[face_ids] * face_sign[:, :, None]
            face_h = mesh.face_lengths[face_ids]

            # Volume rule: one triangle rule per centroid sub-triangle.
            tri_pts = []
            tri_w = []
            for c in gids:
                subs = mesh.cell_geometry(c).subtriangles
                rules = [triangle_rule(self.exactness, s.vertices) for s in subs]
                tri_pts.append(np.concatenate([r.nodes for r in rules]))
                tri_w.append(np.concatenate([r.weights for r in rules]))
            cq_pts = np.stack(tri_pts)
            cq_w = np.stack(tri_w)

            centroids = mesh.cell_centroids[gids]
            diams = mesh.cell_diameters[gids]
            phi_c = monomial_values(cq_pts, centroids[:, None, :], diams[:, None], self.degree + 1)
            grad_c = monomial_gradients(cq_pts, centroids[:, None, :], diams[:, None], self.degree + 1)

            fq_pts = self.face_qp[face_ids]
            fq_w = self.face_qw[face_ids]
            phi_cf = monomial_values(
                fq_pts, centroids[:, None, None, :], diams[:, None, None], self.degree + 1
            )
            grad_cf = monomial_gradients(
                fq_pts, centroids[:, None, None, :], diams[:, None, None], self.degree + 1
            )
            phi_ff = self.face_phi[face_ids]

            loc2glob = np.concatenate(
                [
                    gids[:, None] * self.ncb + np.arange(self.ncb),
                    (
                        self.n_cell_dofs
                        + face_ids[:, :, None] * self.nfb
                        + np.arange(self.nfb)
                    ).reshape(nc, -1),
                ],
                axis=1,
            )
            groups.append(
                CellGroup(
                    cell_ids=gids,
                    face_ids=face_ids,
                    face_sign=face_sign,
                    normals=normals,
                    face_h=face_h,
                    areas=mesh.cell_areas[gids],
                    cq_pts=cq_pts,
                    cq_w=cq_w,
                    fq_pts=fq_pts,
                    fq_w=fq_w,
                    phi_c=phi_c,
                    grad_c=grad_c,
                    phi_cf=phi_cf,
                    grad_cf=grad_cf,
                    phi_ff=phi_ff,
                    mff=self.Mff[face_ids],
                    loc2glob=loc2glob,
                )
            )
        self.groups: tuple[CellGroup, ...] = tuple(groups)
        self._group_of = np.empty(self.n_cells, dtype=int)
        self._row_of = np.empty(self.n_cells, dtype=int)
        for gi, g in enumerate(self.groups):
            self._group_of[g.cell_ids] = gi
            self._row_of[g.cell_ids] = np.arange(g.n_cells)

    def locate_in_group(self, cell_id: int) -> tuple[int, int]:
        """Group index and row of one cell inside the grouped tables."""
        if not 0 <= cell_id < self.n_cells:
            raise InvalidArgumentError(f"cell {cell_id} is out of range")
        return int(self._group_of[cell_id]), int(self._row_of[cell_id])

    def _build_mass(self) -> None:
        self.Mcc = np.empty((self.n_cells, self.ncb, self.ncb))
        self.ivol = np.empty((self.n_cells, self.nrb))
        for g in self.groups:
            self.Mcc[g.cell_ids] = np.einsum(
                "cq,cqi,cqj->cij", g.cq_w, g.phi_c[:, :, : self.ncb], g.phi_c[:, :, : self.ncb]
            )
            self.ivol[g.cell_ids] = np.einsum("cq,cqi->ci", g.cq_w, g.phi_c)

    # -- vectors and fields --------------------------------------------------

    def zero_field(self) -> HybridField:
        return HybridField(
            self.degree,
            np.zeros((self.n_cells, self.ncb)),
            np.zeros((self.n_faces, self.nfb)),
        )

    def check_field(self, field: HybridField) -> None:
        ok = (
            field.degree == self.degree
            and field.cell.shape == (self.n_cells, self.ncb)
            and field.face.shape == (self.n_faces, self.nfb)
        )
        if not ok:
            raise InvalidArgumentError("hybrid field does not match this space")

    def to_vector(self, field: HybridField) -> np.ndarray:
        self.check_field(field)
        return np.concatenate([field.cell.ravel(), field.face.ravel()])

    def from_vector(self, vec: np.ndarray) -> HybridField:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_dofs,):
            raise InvalidArgumentError(
                f"expected vector of length {self.n_dofs}, got shape {vec.shape}"
            )
        cell = vec[: self.n_cell_dofs].reshape(self.n_cells, self.ncb)
        face = vec[self.n_cell_dofs :].reshape(self.n_faces, self.nfb)
        return HybridField(self.degree, cell.copy(), face.copy())

    def gather_local(self, field: HybridField) -> list[np.ndarray]:
        """Per-group local dof vectors (nc, n_loc), cell block then faces."""
        self.check_field(field)
        out = []
        for g in self.groups:
            nc = g.n_cells
            out.append(
                np.concatenate(
                    [field.cell[g.cell_ids], field.face[g.face_ids].reshape(nc, -1)], axis=1
                )
            )
        return out

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> HybridField:
        """Cellwise and facewise L2 projections of a pointwise function."""
        field = self.zero_field()
        for g in self.groups:
            vals = np.asarray(fn(g.cq_pts.reshape(-1, 2)), dtype=float).reshape(g.cq_w.shape)
            b = np.einsum("cq,cq,cqi->ci", g.cq_w, vals, g.phi_c[:, :, : self.ncb])
            field.cell[g.cell_ids] = np.linalg.solve(self.Mcc[g.cell_ids], b[..., None])[..., 0]
        fvals = np.asarray(fn(self.face_qp.reshape(-1, 2)), dtype=float).reshape(self.face_qw.shape)
        bf = np.einsum("fq,fq,fqi->fi", self.face_qw, fvals, self.face_phi)
        field.face = np.linalg.solve(self.Mff, bf[..., None])[..., 0]
        return field

    # -- pointwise tables ----------------------------------------------------

    def cell_values(self, field: HybridField) -> list[np.ndarray]:
        """Cell polynomial values at volume nodes, per group (nc, nQ)."""
        self.check_field(field)
        return [
            np.einsum("cqi,ci->cq", g.phi_c[:, :, : self.ncb], field.cell[g.cell_ids])
            for g in self.groups
        ]

    def trace_values(self, field: HybridField) -> list[np.ndarray]:
        """Cell polynomial traces at face nodes, per group (nc, nf, q)."""
        self.check_field(field)
        return [
            np.einsum("cfqi,ci->cfq", g.phi_cf[:, :, :, : self.ncb], field.cell[g.cell_ids])
            for g in self.groups
        ]

    def face_values(self, field: HybridField) -> list[np.ndarray]:
        """Face polynomial values at face nodes, per group (nc, nf, q)."""
        self.check_field(field)
        return [
            np.einsum("cfqi,cfi->cfq", g.phi_ff, field.face[g.face_ids]) for g in self.groups
        ]

    def cell_moments(self, values: Sequence[np.ndarray]) -> np.ndarray:
        """Load vector (C, ncb) of a function given pointwise at volume nodes."""
        out = np.zeros((self.n_cells, self.ncb))
        for g, v in zip(self.groups, values):
            out[g.cell_ids] = np.einsum("cq,cq,cqi->ci", g.cq_w, v, g.phi_c[:, :, : self.ncb])
        return out

    def face_moments(self, values: np.ndarray) -> np.ndarray:
        """Load vector (F, nfb) of a function given pointwise at face nodes."""
        return np.einsum("fq,fq,fqi->fi", self.face_qw, values, self.face_phi)

    # -- reductions ----------------------------------------------------------

    def cell_averages(self, field: HybridField) -> np.ndarray:
        self.check_field(field)
        return np.einsum("ci,ci->c", self.ivol[:, : self.ncb], field.cell) / self.mesh.cell_areas

    def integral(self, field: HybridField) -> float:
        self.check_field(field)
        return float(np.einsum("ci,ci->", self.ivol[:, : self.ncb], field.cell))

    def l2_norm(self, field: HybridField) -> float:
        self.check_field(field)
        return float(
            np.sqrt(np.einsum("ci,cij,cj->", field.cell, self.Mcc, field.cell).clip(min=0.0))
        )

    def evaluate(self, field: HybridField, points: np.ndarray) -> np.ndarray:
        """Cell polynomial values at arbitrary points (point-located)."""
        self.check_field(field)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            c = locate_cell(self.mesh, p)
            basis = make_cell_basis(self.mesh.cells[c], self.degree)
            out[i] = basis.eval(p) @ field.cell[c]
        return out


# -- local diffusion operators ------------------------------------------------


@dataclass(frozen=True)
class LocalDiffusionOps:
    """Per-group reconstruction and bilinear blocks for one diffusion tensor.

    ``recon[g]`` has shape (nc, nrb, n_loc): coefficients, in the degree-(m+1)
    cell basis, of the reconstructed potential of each local dof; its mean
    matches the cell polynomial's. ``amat[g]`` has shape (nc, n_loc, n_loc)
    and carries consistency plus stabilisation. Cells whose tensor vanishes
    everywhere get identically zero blocks. The tensor samples used at volume
    and face nodes are retained for flux evaluation.
    """

    space: HhoSpace
    recon: list[np.ndarray]
    amat: list[np.ndarray]
    lam_cell: list[np.ndarray]
    lam_face: list[np.ndarray]

    def gradient(self, group: int, local: np.ndarray) -> np.ndarray:
        """Reconstruction gradients at volume nodes: (nc, nQ, 2)."""
        g = self.space.groups[group]
        coefs = np.einsum("cil,cl->ci", self.recon[group], local)
        return np.einsum("cqia,ci->cqa", g.grad_c, coefs)


def tensor_at(fn: TensorField, points: np.ndarray) -> np.ndarray:
    """Evaluate a (2, 2) tensor field at stacked points, any leading shape."""
    pts = np.asarray(points, dtype=float)
    flat = fn(pts.reshape(-1, 2))
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (pts.reshape(-1, 2).shape[0], 2, 2):
        raise InvalidArgumentError("tensor field must return shape (n, 2, 2)")
    return flat.reshape(pts.shape[:-1] + (2, 2))


def local_diffusion_ops(
    space: HhoSpace,
    lam_cell: Sequence[np.ndarray] | None = None,
    lam_face: Sequence[np.ndarray] | None = None,
    fn: TensorField | None = None,
) -> LocalDiffusionOps:
    """Build reconstruction and local matrices for a symmetric tensor field.

    The tensor is supplied either as a callable ``fn`` of point arrays or as
    pointwise samples at this space's quadrature nodes (per group: volume
    samples (nc, nQ, 2, 2) and face samples (nc, nf, q, 2, 2)). A cell whose
    samples are all zero contributes zero operators; a singular
    reconstruction with nonzero tensor raises :class:`ConditioningError`.
    """
    if fn is not None:
        lam_cell = [tensor_at(fn, g.cq_pts) for g in space.groups]
        lam_face = [tensor_at(fn, g.fq_pts) for g in space.groups]
    if lam_cell is None or lam_face is None:
        raise InvalidArgumentError("either fn or both sample sets must be given")

    ncb, nrb, nfb = space.ncb, space.nrb, space.nfb
    recon_out, amat_out = [], []
    for gi, g in enumerate(space.groups):
        nc, nf = g.n_cells, g.n_faces
        q = g.fq_w.shape[2]
        n_loc = ncb + nf * nfb
        lamc = np.asarray(lam_cell[gi], dtype=float)
        lamf = np.asarray(lam_face[gi], dtype=float)
        if lamc.shape != (nc, g.cq_w.shape[1], 2, 2) or lamf.shape != (nc, nf, q, 2, 2):
            raise InvalidArgumentError("tensor samples do not match quadrature tables")

        zero = (np.abs(lamc).max(axis=(1, 2, 3)) == 0.0) & (
            np.abs(lamf).max(axis=(1, 2, 3, 4)) == 0.0
        )
        recon = np.zeros((nc, nrb, n_loc))
        amat = np.zeros((nc, n_loc, n_loc))
        live = np.flatnonzero(~zero)
        if len(live):
            sub = _diffusion_blocks(space, g, live, lamc[live], lamf[live])
            recon[live], amat[live] = sub
        recon_out.append(recon)
        amat_out.append(amat)
    return LocalDiffusionOps(space, recon_out, amat_out, list(lam_cell), list(lam_face))


def _diffusion_blocks(space, g, live, lamc, lamf):
    ncb, nrb, nfb = space.ncb, space.nrb, space.nfb
    nc = len(live)
    nf = g.n_faces
    n_loc = ncb + nf * nfb
    w = g.cq_w[live]
    phi = g.phi_c[live]
    grad = g.grad_c[live]
    fw = g.fq_w[live]
    phif = g.phi_cf[live]
    gradf = g.grad_cf[live]
    ff = g.phi_ff[live]
    nrm = g.normals[live]
    mff = g.mff[live]

    # Stiffness over the degree >= 1 modes of the reconstruction basis.
    lam_grad = np.einsum("cqab,cqib->cqia", lamc, grad)
    M = np.einsum("cq,cqia,cqja->cij", w, lam_grad, grad, optimize=True)
    M1 = M[:, 1:, 1:]

    # Right-hand side of the reconstruction problem, all local dofs as columns.
    B = np.zeros((nc, nrb - 1, n_loc))
    B[:, :, :ncb] = M[:, 1:, :ncb]
    lam_n = np.einsum("cfqab,cfb->cfqa", lamf, nrm)
    dgn = np.einsum("cfqia,cfqa->cfqi", gradf, lam_n)[..., 1:]  # (nc, nf, q, nrb-1)
    B[:, :, :ncb] -= np.einsum(
        "cfq,cfqi,cfqj->cij", fw, dgn, phif[..., :ncb], optimize=True
    )
    bf = np.einsum("cfq,cfqi,cfqj->cfij", fw, dgn, ff, optimize=True)
    B[:, :, ncb:] = np.transpose(bf, (0, 2, 1, 3)).reshape(nc, nrb - 1, nf * nfb)

    G1 = _batched_solve(M1, B, g.cell_ids[live], "gradient reconstruction")

    # Mean-matching constant row completes the reconstruction.
    ivol = space.ivol[g.cell_ids[live]]
    m_loc = np.zeros((nc, n_loc))
    m_loc[:, :ncb] = ivol[:, :ncb]
    row0 = (m_loc - np.einsum("cr,crl->cl", ivol[:, 1:], G1)) / ivol[:, :1]
    recon = np.concatenate([row0[:, None, :], G1], axis=1)

    amat = np.einsum("cil,cim->clm", G1, B, optimize=True)

    # Stabilisation: project the reconstruction defect onto each face space.
    mtt = np.einsum("cq,cqi,cqj->cij", w, phi[:, :, :ncb], phi[:, :, :ncb], optimize=True)
    mt_r1 = np.einsum("cq,cqi,cqj->cij", w, phi[:, :, :ncb], phi[:, :, 1:], optimize=True)
    p_t = _batched_solve(mtt, mt_r1, g.cell_ids[live], "cell projection")
    mf_r1 = np.einsum("cfq,cfqi,cfqj->cfij", fw, ff, phif[..., 1:], optimize=True)
    mf_t = np.einsum("cfq,cfqi,cfqj->cfij", fw, ff, phif[..., :ncb], optimize=True)

    b_f = np.einsum("cfir,crl->cfil", mf_r1, G1, optimize=True)
    x_t = -np.einsum("cir,crl->cil", p_t, G1, optimize=True)
    x_t[:, :, :ncb] += np.eye(ncb)
    b_t = np.einsum("cfij,cjl->cfil", mf_t, x_t, optimize=True)
    delta = np.linalg.solve(
        mff.reshape(nc * nf, nfb, nfb), (b_f + b_t).reshape(nc * nf, nfb, n_loc)
    ).reshape(nc, nf, nfb, n_loc)
    for j in range(nf):
        idx = ncb + j * nfb
        delta[:, j, :, idx : idx + nfb] -= np.eye(nfb)

    n_lam_n = np.einsum("cfa,cfqab,cfb->cfq", nrm, lamf, nrm)
    coef = n_lam_n.max(axis=2) / g.face_h[live]
    amat += np.einsum("cf,cfil,cfij,cfjm->clm", coef, delta, mff, delta, optimize=True)
    return recon, amat


def _batched_solve(mats, rhs, cell_ids, what):
    try:
        out = np.linalg.solve(mats, rhs)
    except np.linalg.LinAlgError:
        out = None
    if out is None or not np.all(np.isfinite(out)):
        for i, cid in enumerate(cell_ids):
            try:
                x = np.linalg.solve(mats[i], rhs[i])
            except np.linalg.LinAlgError:
                x = None
            if x is None or not np.all(np.isfinite(x)):
                raise ConditioningError(
                    f"cell {cid}: singular {what} system", cell_id=int(cid)
                )
        raise ConditioningError(f"singular {what} system")  # pragma: no cover
    return out


# -- global systems -------------------------------------------------------


def assemble_global(space: HhoSpace, local_mats: Sequence[np.ndarray]) -> sp.csr_matrix:
    """Assemble per-group local matrices into one sparse matrix on all dofs."""
    rows, cols, vals = [], [], []
    for g, a in zip(space.groups, local_mats):
        nc, n_loc = a.shape[0], a.shape[1]
        r = np.broadcast_to(g.loc2glob[:, :, None], (nc, n_loc, n_loc))
        c = np.broadcast_to(g.loc2glob[:, None, :], (nc, n_loc, n_loc))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(a.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_dofs, space.n_dofs),
    )
    return mat.tocsr()


def assemble_rhs(space: HhoSpace, cell_rhs: np.ndarray, face_rhs: np.ndarray | None = None):
    """Stack cell and face load blocks into one right-hand side vector."""
    vec = np.zeros(space.n_dofs)
    vec[: space.n_cell_dofs] = np.asarray(cell_rhs, dtype=float).ravel()
    if face_rhs is not None:
        vec[space.n_cell_dofs :] = np.asarray(face_rhs, dtype=float).ravel()
    return vec


def apply_local(space: HhoSpace, local_mats: Sequence[np.ndarray], field: HybridField):
    """Scatter-add the action of cellwise local matrices on a hybrid field."""
    out = np.zeros(space.n_dofs)
    for g, a, loc in zip(space.groups, local_mats, space.gather_local(field)):
        np.add.at(out, g.loc2glob.ravel(), np.einsum("clm,cm->cl", a, loc).ravel())
    return out


@dataclass
class CondensedSystem:
    """Face-only Schur complement of cellwise-eliminable local systems.

    ``matrix`` and ``rhs`` pose the reduced problem on face dofs. The stored
    cell blocks reproduce the eliminated unknowns exactly, including the
    contribution of a cell-supported constraint vector when a multiplier is
    used; :meth:`recover` inverts the elimination, so solving the reduced
    system and recovering is algebraically identical to solving the full one.
    """

    space: HhoSpace
    matrix: sp.csr_matrix
    rhs: np.ndarray
    _kinv: list[np.ndarray]
    _atf: list[np.ndarray]
    _bt: list[np.ndarray]

    def constraint(self, gcell: np.ndarray) -> tuple[np.ndarray, float, float]:
        """Push a cell-supported constraint through the elimination.

        Returns (g_tilde, d, c0) with g_tilde on face dofs, d = g K g and
        c0 = g K b for K the inverse cell blocks.
        """
        gt = np.zeros(self.space.n_face_dofs)
        d = 0.0
        c0 = 0.0
        for g, kinv, atf, bt in zip(self.space.groups, self._kinv, self._atf, self._bt):
            gv = np.asarray(gcell, dtype=float)[g.cell_ids]
            kg = np.einsum("cij,cj->ci", kinv, gv)
            floc = g.loc2glob[:, self.space.ncb :] - self.space.n_cell_dofs
            np.add.at(gt, floc.ravel(), -np.einsum("cif,ci->cf", atf, kg).ravel())
            d += float(np.einsum("ci,ci->", gv, kg))
            c0 += float(np.einsum("ci,ci->", bt, kg))
        return gt, d, c0

    def recover(
        self, x_face: np.ndarray, lam: float = 0.0, gcell: np.ndarray | None = None
    ) -> HybridField:
        """Rebuild the full hybrid field from the face solution."""
        space = self.space
        field = space.zero_field()
        field.face = np.asarray(x_face, dtype=float).reshape(space.n_faces, space.nfb).copy()
        for g, kinv, atf, bt in zip(space.groups, self._kinv, self._atf, self._bt):
            floc = g.loc2glob[:, space.ncb :] - space.n_cell_dofs
            xf = field.face.ravel()[floc]
            r = bt - np.einsum("cif,cf->ci", atf, xf)
            if lam != 0.0 and gcell is not None:
                r = r - lam * np.asarray(gcell, dtype=float)[g.cell_ids]
            field.cell[g.cell_ids] = np.einsum("cij,cj->ci", kinv, r)
        return field


def static_condense(
    space: HhoSpace,
    local_mats: Sequence[np.ndarray],
    cell_rhs: np.ndarray,
    face_rhs: np.ndarray | None = None,
) -> CondensedSystem:
    """Eliminate cell dofs from cellwise local systems.

    ``local_mats`` holds one (nc, n_loc, n_loc) array per group, cell block
    leading. Raises :class:`ConditioningError` naming the first cell whose
    cell block cannot be inverted.
    """
    ncb = space.ncb
    rows, cols, vals = [], [], []
    rhs = np.zeros(space.n_face_dofs)
    kinv_out, atf_out, bt_out = [], [], []
    cell_rhs = np.asarray(cell_rhs, dtype=float).reshape(space.n_cells, ncb)
    for g, a in zip(space.groups, local_mats):
        nc = a.shape[0]
        nfl = a.shape[1] - ncb
        att = a[:, :ncb, :ncb]
        atf = a[:, :ncb, ncb:]
        aft = a[:, ncb:, :ncb]
        aff = a[:, ncb:, ncb:]
        kinv = _batched_inverse(att, g.cell_ids)
        bt = cell_rhs[g.cell_ids]
        k_atf = np.einsum("cij,cjf->cif", kinv, atf)
        s_loc = aff - np.einsum("cfi,cig->cfg", aft, k_atf, optimize=True)
        floc = g.loc2glob[:, ncb:] - space.n_cell_dofs
        rows.append(np.broadcast_to(floc[:, :, None], (nc, nfl, nfl)).ravel())
        cols.append(np.broadcast_to(floc[:, None, :], (nc, nfl, nfl)).ravel())
        vals.append(s_loc.ravel())
        np.add.at(
            rhs,
            floc.ravel(),
            -np.einsum("cfi,cij,cj->cf", aft, kinv, bt, optimize=True).ravel(),
        )
        kinv_out.append(kinv)
        atf_out.append(atf)
        bt_out.append(bt)
    if face_rhs is not None:
        rhs += np.asarray(face_rhs, dtype=float).ravel()
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_face_dofs, space.n_face_dofs),
    ).tocsr()
    return CondensedSystem(space, matrix, rhs, kinv_out, atf_out, bt_out)


def _batched_inverse(mats, cell_ids):
    try:
        out = np.linalg.inv(mats)
    except np.linalg.LinAlgError:
        out = None
    if out is None or not np.all(np.isfinite(out)):
        for i, cid in enumerate(cell_ids):
            try:
                x = np.linalg.inv(mats[i])
            except np.linalg.LinAlgError:
                x = None
            if x is None or not np.all(np.isfinite(x)):
                raise ConditioningError(
                    f"cell {cid}: singular cell block in condensation", cell_id=int(cid)
                )
        raise ConditioningError("singular cell block in condensation")  # pragma: no cover
    return out
