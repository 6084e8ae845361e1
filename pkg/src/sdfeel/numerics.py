"""Small dense linear algebra for mixing matrices.

Matrices are plain row-major ``float64`` numpy arrays.  Eigenvalues of
symmetric matrices come from a cyclic Jacobi sweep written here rather than
LAPACK so that the spectral quantities driving the mixing matrices are
computed by one fixed, inspectable sequence of rotations.
"""
from __future__ import annotations

import math

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, ConvergenceError

MAX_SWEEPS = 100
OFF_DIAGONAL_TOL = 1e-12
SYMMETRY_TOL = 1e-9


def as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=np.float64, copy=True)
    if m.ndim != 2:
        raise ConfigurationError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix has non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigurationError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return math.sqrt(float(np.sum(off * off)))


def sym_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Uses cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
    below ``1e-12`` (scaled by ``max(1, ||A||_F)``).

    Raises
    ------
    ContractViolation
        If ``a`` is not symmetric within ``1e-9``.
    ConvergenceError
        If 100 sweeps do not reach the tolerance.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ContractViolation(f"eigenvalues need a square matrix, got {a.shape}")
    if n and float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL:
        raise ContractViolation("matrix is not symmetric within 1e-9")
    a = 0.5 * (a + a.T)
    tol = OFF_DIAGONAL_TOL * max(1.0, float(np.linalg.norm(a)))
    for _ in range(MAX_SWEEPS + 1):
        if _off_norm(a) < tol:
            return np.sort(np.diag(a))[::-1].copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                app, aqq = a[p, p], a[q, q]
                g = 100.0 * abs(apq)
                if abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                    # below working precision relative to the diagonal
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    sign = 1.0 if theta >= 0 else -1.0
                    t = sign / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")


def operator_norm(a) -> float:
    """Largest singular value, ``sqrt(lambda_max(A^T A))``."""
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    # rescale so the Jacobi tolerance is relative to the matrix, not absolute
    peak = float(np.max(np.abs(a)))
    if peak == 0.0:
        return 0.0
    b = a / peak
    gram = b.T @ b
    return peak * math.sqrt(max(float(sym_eigenvalues(gram)[0]), 0.0))
