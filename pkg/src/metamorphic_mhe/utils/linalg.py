"""Dense linear algebra helpers shared by the estimation modules."""

from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from metamorphic_mhe.errors import DimensionError, SingularMatrixError


def symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def is_symmetric(X: np.ndarray, rtol: float = 1e-10) -> bool:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    return bool(np.max(np.abs(X - X.T), initial=0.0) <= rtol * scale)


def numerical_rank(M: np.ndarray) -> int:
    """Rank by singular-value thresholding at max(shape) * eps * sigma_max."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    sigma = np.linalg.svd(M, compute_uv=False)
    if sigma[0] == 0.0:
        return 0
    threshold = max(M.shape) * np.finfo(float).eps * sigma[0]
    return int(np.sum(sigma > threshold))


def min_eig(X: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part of X."""
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(X, dtype=float)))[0])


def spectral_radius(A: np.ndarray) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def spd_solve(S: np.ndarray, B: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Solve S X = B for symmetric positive definite S via Cholesky."""
    try:
        factor = linalg.cho_factor(symmetrize(S), lower=True)
    except linalg.LinAlgError as e:
        raise SingularMatrixError(
            f"{what} is not positive definite", float(np.linalg.cond(S))
        ) from e
    return linalg.cho_solve(factor, B)


def spd_inverse(S: np.ndarray, what: str = "matrix") -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return symmetrize(spd_solve(S, np.eye(S.shape[0]), what))


def block_toeplitz_lower(
    blocks: Sequence[np.ndarray], rows: int, cols: int, block_shape: tuple[int, int]
) -> np.ndarray:
    """Strictly lower block-Toeplitz matrix.

    Block (i, j) equals ``blocks[i - j - 1]`` for i > j and zero otherwise.
    """
    r, c = block_shape
    out = np.zeros((rows * r, cols * c))
    for i in range(rows):
        for j in range(min(i, cols)):
            out[i * r : (i + 1) * r, j * c : (j + 1) * c] = blocks[i - j - 1]
    return out


def spectra_match(achieved: np.ndarray, targets: np.ndarray, tol: float) -> bool:
    """Multiset comparison of two eigenvalue lists within tol."""
    achieved = np.asarray(achieved, dtype=complex).ravel()
    targets = np.asarray(targets, dtype=complex).ravel()
    if achieved.shape != targets.shape:
        return False
    cost = np.abs(achieved[:, None] - targets[None, :])
    rows, cols = linear_sum_assignment(cost)
    return bool(np.max(cost[rows, cols], initial=0.0) <= tol)


def sorted_spectrum(values: np.ndarray, decimals: int = 10) -> np.ndarray:
    """Eigenvalues sorted by (real, imaginary) after rounding."""
    values = np.asarray(values, dtype=complex).ravel()
    keys = np.lexsort(
        (np.round(values.imag, decimals), np.round(values.real, decimals))
    )
    return values[keys]
