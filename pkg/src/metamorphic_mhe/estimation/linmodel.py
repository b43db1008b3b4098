"""Plant and observer structure: rank tests, Schur checks, pole placement and
the observer-augmented model."""

import logging
from typing import NamedTuple, Sequence

import numpy as np
from scipy import signal

from metamorphic_mhe.errors import DimensionError, PolePlacementError, UnobservableError
from metamorphic_mhe.models.system_types import AugmentedPlant, LinearPlant, ObserverGain
from metamorphic_mhe.utils.linalg import numerical_rank, spectra_match, spectral_radius

logger = logging.getLogger(__name__)


class SchurCheck(NamedTuple):
    spectral_radius: float
    stable: bool


def _square(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got {A.shape}")
    return A


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Stacked [C; CA; ...; CA^(n-1)]."""
    A = _square(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != A.shape[0]:
        raise DimensionError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(A: np.ndarray, Bc: np.ndarray) -> np.ndarray:
    """[Bc, A Bc, ..., A^(n-1) Bc]."""
    A = _square(A)
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(-1, 1)
    if Bc.shape[0] != A.shape[0]:
        raise DimensionError(f"Bc has {Bc.shape[0]} rows, expected {A.shape[0]}")
    return observability_matrix(A.T, Bc.T).T


def check_observable(A: np.ndarray, C: np.ndarray) -> bool:
    O = observability_matrix(A, C)  # noqa: E741
    return numerical_rank(O) == O.shape[1]


def check_controllable(A: np.ndarray, Bc: np.ndarray) -> bool:
    K = controllability_matrix(A, Bc)
    return numerical_rank(K) == K.shape[0]


def check_schur(A: np.ndarray) -> SchurCheck:
    rho = spectral_radius(_square(A))
    return SchurCheck(spectral_radius=rho, stable=rho < 1.0)


def observer_gain(plant: LinearPlant, L: np.ndarray) -> ObserverGain:
    """Wrap a given gain L, validating that A - LC is Schur stable."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape != (plant.n, plant.p):
        raise DimensionError(f"L must be {plant.n}x{plant.p}, got {L.shape}")
    return ObserverGain(L=L, A_L=plant.A - L @ plant.C)


def place_poles(A: np.ndarray, C: np.ndarray, targets: Sequence[complex]) -> ObserverGain:
    """Observer gain L with eig(A - LC) equal to ``targets``.

    Placement runs on the dual pair (A^T, C^T) with scipy's robust
    eigenstructure assignment; the achieved spectrum is verified to 1e-6.
    """
    A = _square(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    targets = np.asarray(targets, dtype=complex).ravel()
    if targets.size != A.shape[0]:
        raise DimensionError(f"need {A.shape[0]} target poles, got {targets.size}")
    if not spectra_match(targets, np.conj(targets), 1e-12):
        raise ValueError("target poles must be closed under conjugation")
    if np.any(np.abs(targets) >= 1.0):
        raise ValueError("target poles must lie strictly inside the unit circle")
    if not check_observable(A, C):
        raise UnobservableError("(A, C) is not observable; poles cannot be placed")

    poles = np.real_if_close(targets, tol=1000)
    try:
        placed = signal.place_poles(A.T, C.T, poles)
    except ValueError as e:
        raise PolePlacementError(f"pole placement failed: {e}", []) from e
    L = np.asarray(placed.gain_matrix).T

    A_L = A - L @ C
    achieved = np.linalg.eigvals(A_L)
    if not spectra_match(achieved, targets, 1e-6):
        raise PolePlacementError("placed spectrum differs from targets", achieved)
    logger.debug(f"Placed observer poles {achieved}")
    return ObserverGain(L=L, A_L=A_L)


def augment(plant: LinearPlant, obs: ObserverGain) -> AugmentedPlant:
    """Augmented model of observer state and observer error.

    A_e = [[A, LC], [0, A_L]], G_e = [[0, L], [G, -L]], C_e = [C, C].
    """
    n, p, m = plant.n, plant.p, plant.m
    if obs.L.shape != (n, p):
        raise DimensionError(f"observer gain is {obs.L.shape}, plant needs {(n, p)}")
    A_e = np.block([[plant.A, obs.L @ plant.C], [np.zeros((n, n)), obs.A_L]])
    G_e = np.block([[np.zeros((n, m)), obs.L], [plant.G, -obs.L]])
    C_e = np.hstack([plant.C, plant.C])
    return AugmentedPlant(A_e=A_e, G_e=G_e, C_e=C_e, n=n)


def check_augmented_observability(aug: AugmentedPlant) -> bool:
    """Rank test on (A_e, C_e).

    C_e x_e = C (xtilde + e) and the plant state evolves without the error
    block, so the error block is unobservable and this is False for every
    observer-augmented model.
    """
    return check_observable(aug.A_e, aug.C_e)


def observer_run(
    plant: LinearPlant, obs: ObserverGain, x0: np.ndarray, ys: np.ndarray, us: np.ndarray | None = None
) -> np.ndarray:
    """Luenberger recursion xhat+ = A xhat + B u + L (y - C xhat) for times 0..T."""
    x = np.asarray(x0, dtype=float).copy()
    out = [x.copy()]
    for k, y in enumerate(np.atleast_2d(ys)):
        x = plant.A @ x + obs.L @ (y - plant.C @ x)
        if us is not None and plant.B is not None:
            x = x + plant.B @ np.atleast_1d(us[k])
        out.append(x.copy())
    return np.array(out)
