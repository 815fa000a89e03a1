"""Scaled monomial bases on cells and faces, and local L2 projection.

Cell basis functions are ((x - xT)/hT)^r ((y - yT)/hT)^s with r + s <= m,
ordered by total degree and, within a degree block, by descending r. This
ordering nests: the degree-m basis is the leading slice of the degree-(m+1)
basis, which the local operator assembly relies on.

Face basis functions are powers of the affine coordinate
t(x) = (x - xF) . (x0 - xF) / hF^2, where x0 is the reference endpoint; t
ranges over [-1/4, 1/4] along the face and vanishes at the midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .quadrature import segment_rule, triangle_rule


def cell_space_dimension(m: int) -> int:
    """Dimension of the bivariate polynomial space of total degree <= m."""
    return (m + 1) * (m + 2) // 2


def cell_exponents(m: int) -> np.ndarray:
    """Exponent pairs (r, s) in basis order, shape (dim, 2)."""
    if m < 0:
        raise InvalidArgumentError(f"polynomial degree must be nonnegative, got {m}")
    pairs = [(d - j, j) for d in range(m + 1) for j in range(d + 1)]
    return np.array(pairs, dtype=int)


@dataclass(frozen=True)
class CellBasis:
    """Scaled monomials attached to one cell."""

    centroid: np.ndarray
    h: float
    degree: int

    @property
    def dim(self) -> int:
        return cell_space_dimension(self.degree)

    def eval(self, points) -> np.ndarray:
        """Values at ``points`` (..., 2); result shape (..., dim)."""
        return _monomial_values(points, self.centroid, self.h, self.degree)

    def grad(self, points) -> np.ndarray:
        """Gradients at ``points``; result shape (..., dim, 2)."""
        return _monomial_gradients(points, self.centroid, self.h, self.degree)


@dataclass(frozen=True)
class FaceBasis:
    """Powers of the scaled affine coordinate along one face."""

    center: np.ndarray
    ref_point: np.ndarray
    h: float
    degree: int

    @property
    def dim(self) -> int:
        return self.degree + 1

    def coordinate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        d = self.ref_point - self.center
        return ((pts - self.center) @ d) / self.h**2

    def eval(self, points) -> np.ndarray:
        t = self.coordinate(points)
        return t[..., None] ** np.arange(self.degree + 1)


def _scaled_powers(xi, m):
    # xi shape (..., 2); returns px, py of shape (..., m+1) with px[..., r] = xi_x^r
    out_x = np.empty(xi.shape[:-1] + (m + 1,))
    out_y = np.empty_like(out_x)
    out_x[..., 0] = 1.0
    out_y[..., 0] = 1.0
    for r in range(1, m + 1):
        out_x[..., r] = out_x[..., r - 1] * xi[..., 0]
        out_y[..., r] = out_y[..., r - 1] * xi[..., 1]
    return out_x, out_y


def _monomial_values(points, centroid, h, m):
    # h broadcasts against points.shape[:-1], centroid against points.
    pts = np.asarray(points, dtype=float)
    hh = np.asarray(h, dtype=float)
    xi = (pts - np.asarray(centroid)) / hh[..., None]
    px, py = _scaled_powers(xi, m)
    exps = cell_exponents(m)
    return px[..., exps[:, 0]] * py[..., exps[:, 1]]


def _monomial_gradients(points, centroid, h, m):
    pts = np.asarray(points, dtype=float)
    hh = np.asarray(h, dtype=float)
    xi = (pts - np.asarray(centroid)) / hh[..., None]
    px, py = _scaled_powers(xi, m)
    exps = cell_exponents(m)
    n = len(exps)
    shape = np.broadcast_shapes(pts.shape[:-1], hh.shape)
    grad = np.zeros(shape + (n, 2))
    for i, (r, s) in enumerate(exps):
        if r > 0:
            grad[..., i, 0] = (r / hh) * px[..., r - 1] * py[..., s]
        if s > 0:
            grad[..., i, 1] = (s / hh) * px[..., r] * py[..., s - 1]
    return grad


def monomial_values(points, centroid, h, degree: int) -> np.ndarray:
    """Scaled monomial values with broadcastable centre and size.

    ``points`` has shape (..., 2); ``centroid`` and ``h`` broadcast against it,
    so one call can evaluate the bases of many cells at once. Result shape is
    (..., dim).
    """
    return _monomial_values(points, centroid, h, degree)


def monomial_gradients(points, centroid, h, degree: int) -> np.ndarray:
    """Gradients companion to :func:`monomial_values`; shape (..., dim, 2)."""
    return _monomial_gradients(points, centroid, h, degree)


def face_coordinate_values(points, center, ref_point, h, degree: int) -> np.ndarray:
    """Face basis values with broadcastable face data; shape (..., degree + 1)."""
    pts = np.asarray(points, dtype=float)
    d = np.asarray(ref_point, dtype=float) - np.asarray(center, dtype=float)
    t = np.sum((pts - center) * d, axis=-1) / np.asarray(h, dtype=float) ** 2
    return t[..., None] ** np.arange(degree + 1)


@dataclass(frozen=True)
class Polynomial:
    """A polynomial expressed in a cell or face basis."""

    basis: object
    coefficients: np.ndarray

    def __call__(self, points):
        return self.basis.eval(points) @ self.coefficients

    def gradient(self, points):
        if not isinstance(self.basis, CellBasis):
            raise InvalidArgumentError("gradients are only provided for cell polynomials")
        return np.einsum("...id,i->...d", self.basis.grad(points), self.coefficients)


def make_cell_basis(cell, m: int) -> CellBasis:
    """Basis attached to a cell-geometry object (needs .centroid and .diameter)."""
    return CellBasis(centroid=np.asarray(cell.centroid, dtype=float), h=float(cell.diameter), degree=int(m))


def make_face_basis(face, m: int) -> FaceBasis:
    """Basis attached to a face-geometry object (needs .center, .ref_point, .length)."""
    return FaceBasis(
        center=np.asarray(face.center, dtype=float),
        ref_point=np.asarray(face.ref_point, dtype=float),
        h=float(face.length),
        degree=int(m),
    )


def l2_project(target, support, m: int, extra_exactness: int = 2) -> Polynomial:
    """L2-orthogonal projection of ``target`` onto degree-m polynomials.

    ``support`` is a cell geometry (projection over the polygon, integrated
    over its centroid sub-triangles) or a face geometry (projection along the
    segment). ``target`` maps an (n, 2) array of points to n values. The
    quadrature is exact to degree 2m + extra_exactness, so projecting a
    polynomial of degree <= m + extra_exactness/2 is exact up to round-off and
    the projection is idempotent.
    """
    exactness = 2 * m + int(extra_exactness)
    if hasattr(support, "subtriangles"):
        basis = make_cell_basis(support, m)
        rules = [triangle_rule(exactness, tri.vertices) for tri in support.subtriangles]
        nodes = np.vstack([r.nodes for r in rules])
        weights = np.concatenate([r.weights for r in rules])
    else:
        basis = make_face_basis(support, m)
        rule = segment_rule(exactness, np.array([support.endpoints[0], support.endpoints[1]]))
        nodes, weights = rule.nodes, rule.weights
    vals = basis.eval(nodes)
    gram = np.einsum("q,qi,qj->ij", weights, vals, vals)
    rhs = np.einsum("q,qi,q->i", weights, vals, np.asarray(target(nodes), dtype=float))
    return Polynomial(basis=basis, coefficients=np.linalg.solve(gram, rhs))
