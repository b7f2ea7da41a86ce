#!/usr/bin/env python3
"""
Dense linear-algebra kernel.

A Matrix is a 2-D, C-contiguous numpy array of float64. Batches are stored with
samples as columns so activations and error signals follow the column-vector
convention (features x batch). Every public operation checks operand shapes and
refuses to return NaN/Inf.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError

Matrix = np.ndarray
Scalar = Union[int, float]

POWER_ITERATIONS = 50
POWER_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SpectralEstimate:
    """Result of a spectral-norm computation."""
    value: float
    converged: bool
    iterations: int
    method: str  # "power_iteration" or "frobenius_fallback"


def _ensure_finite(result: np.ndarray, operation: str) -> np.ndarray:
    if not np.all(np.isfinite(result)):
        raise NonFiniteError(operation, int(np.count_nonzero(~np.isfinite(result))))
    return result


def _require_2d(m: np.ndarray, operation: str) -> None:
    if m.ndim != 2:
        raise ShapeMismatchError(operation, m.shape, detail="expected a 2-D matrix")


def as_matrix(data: Union[Sequence, np.ndarray]) -> Matrix:
    """Convert nested sequences (or a 1-D vector, read as a column) to a Matrix."""
    m = np.array(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    _require_2d(m, "as_matrix")
    return _ensure_finite(np.ascontiguousarray(m), "as_matrix")


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def ones(rows: int, cols: int) -> Matrix:
    return np.ones((rows, cols), dtype=np.float64)


def identity(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b.

    Raises:
        ShapeMismatchError: if a.cols != b.rows (both shapes are carried).
    """
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape, "inner dimensions differ")
    return _ensure_finite(np.matmul(a, b), "matmul")


def frobenius_norm(m: Matrix) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(m))


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeMismatchError("hadamard", a.shape, b.shape)
    return _ensure_finite(np.multiply(a, b), "hadamard")


def transpose(m: Matrix) -> Matrix:
    _require_2d(m, "transpose")
    return np.ascontiguousarray(m.T)


def axpy(alpha: Scalar, x: Matrix, y: Matrix) -> Matrix:
    """alpha * x + y as a new matrix."""
    if x.shape != y.shape:
        raise ShapeMismatchError("axpy", x.shape, y.shape)
    return _ensure_finite(alpha * x + y, "axpy")


def scale(alpha: Scalar, m: Matrix) -> Matrix:
    return _ensure_finite(alpha * m, "scale")


def max_abs(m: np.ndarray) -> float:
    """Largest absolute entry (the entrywise infinity norm); 0 for empty input."""
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m)))


def row_sum(m: Matrix) -> np.ndarray:
    """Sum over columns, one value per row."""
    _require_2d(m, "row_sum")
    return m.sum(axis=1)


def column_mean(m: Matrix) -> np.ndarray:
    """Mean over columns, one value per row."""
    _require_2d(m, "column_mean")
    if m.shape[1] == 0:
        raise ShapeMismatchError("column_mean", m.shape, detail="matrix has no columns")
    return m.mean(axis=1)


def spectral_norm(m: Matrix, iterations: int = POWER_ITERATIONS,
                  tol: float = POWER_TOLERANCE) -> SpectralEstimate:
    """Largest singular value by power iteration on m^T m.

    The start vector is deterministic so repeated calls agree bitwise. When the
    relative change of the estimate does not fall below ``tol`` within
    ``iterations`` steps, the Frobenius norm (an upper bound) is returned and
    flagged as a fallback.
    """
    _require_2d(m, "spectral_norm")
    if m.size == 0 or not np.any(m):
        return SpectralEstimate(0.0, True, 0, "power_iteration")

    cols = m.shape[1]
    v = np.linspace(1.0, 2.0, cols)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for it in range(1, iterations + 1):
        u = m @ v
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            # start vector in the null space; fall through to the safe bound
            break
        w = m.T @ (u / u_norm)
        w_norm = np.linalg.norm(w)
        new_sigma = float(w_norm)
        v = w / w_norm
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-300):
            return SpectralEstimate(new_sigma, True, it, "power_iteration")
        sigma = new_sigma

    return SpectralEstimate(frobenius_norm(m), False, iterations, "frobenius_fallback")
