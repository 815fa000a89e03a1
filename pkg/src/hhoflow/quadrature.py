"""Quadrature rules on segments and triangles.

Triangle rules are built as collapsed (Duffy) tensor products: a
Gauss-Jacobi(1,0) rule in the collapsed direction absorbs the Duffy Jacobian
exactly, so a rule requested for exactness degree d integrates every
polynomial of total degree <= d without error. The degree-1 rule degenerates
to the one-node centroid rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .errors import CapabilityError, InvalidArgumentError

MAX_TRIANGLE_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on a physical segment or triangle.

    ``nodes`` has shape (n, 2) and ``weights`` (n,); the weights sum to the
    measure of the entity. ``exactness`` is the guaranteed polynomial degree.
    """

    nodes: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Contract sampled integrand values (shape (n, ...)) with the weights."""
        return np.tensordot(self.weights, np.asarray(values), axes=1)


def _check_degree(degree):
    if not isinstance(degree, (int, np.integer)) or degree < 0:
        raise InvalidArgumentError(f"exactness degree must be a nonnegative integer, got {degree!r}")


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int):
    """Rule on the unit simplex {a, b >= 0, a + b <= 1}.

    Returns (points (n,2), weights (n,)), weights summing to 1/2.
    """
    _check_degree(degree)
    if degree > MAX_TRIANGLE_DEGREE:
        raise CapabilityError(
            f"triangle rules are provided up to exactness degree {MAX_TRIANGLE_DEGREE}, got {degree}"
        )
    n = max(1, (degree + 2) // 2)  # 2n-1 >= degree
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    xl, wl = leggauss(n)
    v = 0.5 * (xl + 1.0)
    wv = 0.5 * wl
    a = np.repeat(u, n)
    b = np.tile(v, n) * (1.0 - a)
    w = np.repeat(wu, n) * np.tile(wv, n)
    pts = np.column_stack([a, b])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def triangle_rule(degree: int, vertices) -> QuadratureRule:
    """Quadrature on the physical triangle spanned by ``vertices`` (3, 2).

    Exact for all bivariate polynomials of total degree <= ``degree``.
    Raises CapabilityError above degree 20.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.shape != (3, 2):
        raise InvalidArgumentError(f"expected three 2D vertices, got shape {verts.shape}")
    ref, w = reference_triangle_rule(degree)
    e1 = verts[1] - verts[0]
    e2 = verts[2] - verts[0]
    area2 = e1[0] * e2[1] - e1[1] * e2[0]
    if area2 <= 0.0:
        raise InvalidArgumentError("triangle vertices must be in counterclockwise order")
    nodes = verts[0] + np.outer(ref[:, 0], e1) + np.outer(ref[:, 1], e2)
    return QuadratureRule(nodes=nodes, weights=w * area2, exactness=degree)


@lru_cache(maxsize=None)
def reference_segment_rule(degree: int):
    """Gauss-Legendre rule on [0, 1]; returns (points (n,), weights (n,))."""
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    x, w = leggauss(n)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    t.setflags(write=False)
    wt.setflags(write=False)
    return t, wt


def segment_rule(degree: int, endpoints) -> QuadratureRule:
    """Gauss-Legendre quadrature on the physical segment ``endpoints`` (2, 2).

    Exact for univariate polynomials (along the segment) of degree <= ``degree``;
    all weights are positive.
    """
    ends = np.asarray(endpoints, dtype=float)
    if ends.shape != (2, 2):
        raise InvalidArgumentError(f"expected two 2D endpoints, got shape {ends.shape}")
    t, w = reference_segment_rule(degree)
    nodes = ends[0] + np.outer(t, ends[1] - ends[0])
    length = float(np.hypot(*(ends[1] - ends[0])))
    if length <= 0.0:
        raise InvalidArgumentError("segment endpoints coincide")
    return QuadratureRule(nodes=nodes, weights=w * length, exactness=degree)
