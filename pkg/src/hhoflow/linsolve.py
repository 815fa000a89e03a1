"""Sparse direct solves with mandatory a posteriori residual checks.

Every solve recomputes the residual of the system it claims to have solved
and raises :class:`SolverError` when the relative residual exceeds the given
tolerance, so ill-conditioned factorisations cannot silently return garbage.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, SolverError


def _check_residual(matrix, x, rhs, tol, what):
    res = matrix @ x - rhs
    scale = max(float(np.linalg.norm(rhs)), float(np.linalg.norm(matrix @ x)), 1e-300)
    rel = float(np.linalg.norm(res)) / scale
    if not np.isfinite(rel) or rel > tol:
        raise SolverError(
            f"{what}: relative residual {rel:.3e} exceeds tolerance {tol:.1e}",
            residual=rel,
        )
    return rel


def solve_direct(matrix: sp.spmatrix, rhs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """LU-solve a sparse system and verify the residual."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim != 1 or matrix.shape != (len(rhs), len(rhs)):
        raise SolverError(
            f"system shape mismatch: matrix {matrix.shape}, rhs {rhs.shape}"
        )
    if not np.all(np.isfinite(rhs)):
        raise SolverError("right-hand side contains non-finite entries")
    try:
        lu = spla.splu(sp.csc_matrix(matrix))
        x = lu.solve(rhs)
    except (RuntimeError, ValueError) as exc:
        raise SolverError(f"sparse factorisation failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("solution contains non-finite entries")
    _check_residual(matrix, x, rhs, tol, "direct solve")
    return x


def solve_with_mean_constraint(
    matrix: sp.spmatrix,
    gvec: np.ndarray,
    corner: float,
    rhs: np.ndarray,
    target: float = 0.0,
    tol: float = 1e-9,
    check_compatibility: bool = False,
) -> tuple[np.ndarray, float]:
    """Solve the bordered system [[A, g], [g^T, -d]] [x; s] = [b; target].

    The scalar multiplier s absorbs any incompatibility between the rhs and
    the (near-)singular operator; with compatible data it comes out at
    roundoff level. With ``check_compatibility`` the multiplier magnitude is
    compared against the rhs scale and a :class:`CompatibilityError` is
    raised when the data demand a non-negligible source correction.
    """
    gvec = np.asarray(gvec, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    bordered = sp.bmat(
        [
            [sp.csr_matrix(matrix), sp.csr_matrix(gvec.reshape(-1, 1))],
            [sp.csr_matrix(gvec.reshape(1, -1)), sp.csr_matrix([[-corner]])],
        ],
        format="csc",
    )
    full_rhs = np.concatenate([rhs, [float(target)]])
    sol = solve_direct(bordered, full_rhs, tol=tol)
    x, s = sol[:n], float(sol[n])
    if check_compatibility:
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        if abs(s) > 1e-6 * scale:
            raise CompatibilityError(
                f"constraint multiplier {s:.3e} is large against data scale {scale:.3e};"
                " sources are incompatible with the pure-flux problem"
            )
    return x, s
