"""Direct linear solves used by the regulation Newton loop and the mechanics step.

Systems up to ``DENSE_LIMIT`` unknowns are factorized densely; larger ones go through SuperLU.
"""
import logging

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from errors import LinearSolveFailure

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


def _as_dense(matrix) -> np.ndarray:
    return matrix.toarray() if scipy.sparse.issparse(matrix) else np.asarray(matrix, dtype=float)


def _checked(solution: np.ndarray, label: str) -> np.ndarray:
    if not np.all(np.isfinite(solution)):
        raise LinearSolveFailure(f"{label} produced non-finite values")
    return solution


def solve_symmetric_indefinite(matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve a symmetric (possibly indefinite) system.

    Dense systems use the Bunch-Kaufman factorization ``A = L D L^T`` with the block-diagonal
    ``D`` solved as a tridiagonal band; larger systems fall back to a sparse LU.

    :param matrix: symmetric matrix, dense or scipy sparse.
    :param rhs: right-hand side.
    :type rhs: numpy.ndarray
    :return: solution vector.
    :rtype: numpy.ndarray
    :raises LinearSolveFailure: on factorization breakdown.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if n == 0:
        return np.zeros(0)
    if n > DENSE_LIMIT:
        return _sparse_solve(matrix, rhs, "sparse saddle-point solve")
    dense = _as_dense(matrix)
    try:
        lu, d, perm = scipy.linalg.ldl(dense, lower=True)
        lower = lu[perm]
        y = scipy.linalg.solve_triangular(lower, rhs[perm], lower=True, unit_diagonal=True)
        band = np.zeros((3, n))
        band[0, 1:] = np.diagonal(d, 1)
        band[1] = np.diagonal(d)
        band[2, :-1] = np.diagonal(d, -1)
        z = scipy.linalg.solve_banded((1, 1), band, y)
        w = scipy.linalg.solve_triangular(lower.T, z, lower=False, unit_diagonal=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinearSolveFailure(f"LDL^T factorization failed: {exc}") from exc
    solution = np.empty(n)
    solution[perm] = w
    return _checked(solution, "LDL^T solve")


def solve_general(matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve a general square system by LU factorization."""
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if n == 0:
        return np.zeros(0)
    if n > DENSE_LIMIT:
        return _sparse_solve(matrix, rhs, "sparse LU solve")
    try:
        factors = scipy.linalg.lu_factor(_as_dense(matrix), check_finite=True)
        return _checked(scipy.linalg.lu_solve(factors, rhs), "LU solve")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinearSolveFailure(f"LU factorization failed: {exc}") from exc


def _sparse_solve(matrix, rhs: np.ndarray, label: str) -> np.ndarray:
    logger.debug("%s: sparse LU for %d unknowns", label, rhs.shape[0])
    try:
        factor = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(matrix))
        return _checked(factor.solve(rhs), label)
    except RuntimeError as exc:
        raise LinearSolveFailure(f"{label} failed: {exc}") from exc
