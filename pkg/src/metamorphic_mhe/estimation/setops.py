"""Interval arithmetic on axis-aligned boxes and RPI outer boxes."""

import logging

import numpy as np

from metamorphic_mhe.errors import ConvergenceError, DimensionError, NotSchurError, RpiError
from metamorphic_mhe.models.system_types import Box
from metamorphic_mhe.utils.linalg import spectral_radius

logger = logging.getLogger(__name__)


def linear_image(M: np.ndarray, box: Box) -> Box:
    """Interval hull of {M x : x in box}."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != box.dim:
        raise DimensionError(f"map has {M.shape[1]} columns, box has dimension {box.dim}")
    lo = M * box.lower
    hi = M * box.upper
    # 0 * inf is nan where an entry of M is zero
    lo = np.where(M == 0.0, 0.0, lo)
    hi = np.where(M == 0.0, 0.0, hi)
    return Box(lower=np.minimum(lo, hi).sum(axis=1), upper=np.maximum(lo, hi).sum(axis=1))


def minkowski_sum(a: Box, b: Box) -> Box:
    if a.dim != b.dim:
        raise DimensionError(f"cannot add boxes of dimension {a.dim} and {b.dim}")
    return Box(lower=a.lower + b.lower, upper=a.upper + b.upper)


def disturbance_box(G: np.ndarray, W: Box, L: np.ndarray, V: Box) -> Box:
    """Box containing G w - L v for w in W, v in V."""
    return minkowski_sum(linear_image(G, W), linear_image(-np.asarray(L, dtype=float), V))


def is_rpi(A_L: np.ndarray, Q_box: Box, E: Box, tol: float = 0.0) -> bool:
    """Certificate A_L E + Q_box within E."""
    return E.contains(minkowski_sum(linear_image(A_L, E), Q_box), tol=tol)


def rpi_box_outer(
    A_L: np.ndarray, Q_box: Box, tol: float = 1e-9, max_iter: int = 10_000
) -> Box:
    """Outer box of the minimal RPI set of e+ = A_L e + q, q in Q_box.

    The box recursion S_{k+1} = A_L S_k + Q_box from S_0 = {0} acts on centers
    through A_L and on half widths through |A_L|, so a finite invariant box
    exists iff rho(|A_L|) < 1. The iteration runs until the Hausdorff gap
    drops below tol. Its limit is the fixed point c = (I - A_L)^-1 c_Q,
    h = (I - |A_L|)^-1 h_Q, which is inflated along v = (I - |A_L|)^-1 1 by
    at most tol so that the certificate holds with a strict margin.
    """
    A_L = np.atleast_2d(np.asarray(A_L, dtype=float))
    if A_L.shape != (Q_box.dim, Q_box.dim):
        raise DimensionError(f"A_L shape {A_L.shape} does not match box dimension {Q_box.dim}")
    rho = spectral_radius(A_L)
    if rho >= 1.0:
        raise NotSchurError(f"A_L is not Schur stable (spectral radius {rho:.6f})", rho)
    if not Q_box.is_bounded:
        raise RpiError("disturbance box must be bounded")
    abs_A = np.abs(A_L)
    abs_rho = spectral_radius(abs_A)
    if abs_rho >= 1.0:
        raise RpiError(
            f"no axis-aligned RPI box exists: spectral radius of |A_L| is {abs_rho:.6f}"
        )

    n = Q_box.dim
    S = Box.zero(n)
    gap = np.inf
    for k in range(1, max_iter + 1):
        S_next = minkowski_sum(linear_image(A_L, S), Q_box)
        gap = S_next.hausdorff(S)
        S = S_next
        if gap < tol:
            logger.debug(f"RPI box iteration converged after {k} steps (gap {gap:.3e})")
            break
    else:
        raise ConvergenceError("RPI box iteration did not converge", max_iter, gap)

    I = np.eye(n)  # noqa: E741
    v = np.linalg.solve(I - abs_A, np.ones(n))
    center = np.linalg.solve(I - A_L, Q_box.center)
    half = np.maximum(np.linalg.solve(I - abs_A, Q_box.half_width), S.half_width)
    half = half + (tol / np.max(v)) * v
    E = Box(lower=center - half, upper=center + half)

    if not is_rpi(A_L, Q_box, E):
        raise RpiError("computed box failed the invariance certificate")
    return E
