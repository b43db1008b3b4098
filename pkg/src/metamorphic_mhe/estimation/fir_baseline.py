"""Unbiased FIR baseline: batch least squares over the moving window,
independent of any prior and of the noise statistics."""

import logging
from collections import deque
from typing import Deque, NamedTuple, Optional, Protocol

import numpy as np

from metamorphic_mhe.errors import DimensionError, SingularMatrixError
from metamorphic_mhe.estimation.mhe_init import build_open_loop_maps
from metamorphic_mhe.models.system_types import LinearPlant
from metamorphic_mhe.utils.linalg import numerical_rank, spd_solve

logger = logging.getLogger(__name__)


class StackMaps(Protocol):
    Lambda: np.ndarray
    Gamma: np.ndarray
    horizon: int


class OpenLoopMaps(NamedTuple):
    Lambda: np.ndarray
    Gamma: np.ndarray
    Phi_w: np.ndarray
    horizon: int


class FirEstimate(NamedTuple):
    start: np.ndarray
    current: np.ndarray


def open_loop_maps(plant: LinearPlant, N: int) -> OpenLoopMaps:
    Lam, Gam, Phi_w = build_open_loop_maps(plant.A, plant.B, plant.C, N)
    return OpenLoopMaps(Lambda=Lam, Gamma=Gam, Phi_w=Phi_w, horizon=N)


def ufir_estimate(
    y_stack: np.ndarray,
    u_stack: Optional[np.ndarray],
    maps: StackMaps,
    plant: LinearPlant,
) -> FirEstimate:
    """x_{t-N} = (Lambda' Lambda)^-1 Lambda' (y - Gamma u), propagated to x_t
    through the model without noise."""
    N, n, q = maps.horizon, plant.n, plant.q
    y = np.asarray(y_stack, dtype=float).ravel()
    if y.size != maps.Lambda.shape[0]:
        raise DimensionError(f"y-stack has {y.size} entries, expected {maps.Lambda.shape[0]}")
    u = np.zeros(0) if q == 0 else np.asarray(u_stack, dtype=float).ravel()
    if u.size != N * q:
        raise DimensionError(f"u-stack has {u.size} entries, expected {N * q}")
    if numerical_rank(maps.Lambda) < n:
        raise SingularMatrixError(
            "window Gram matrix is singular (window too short or pair unobservable)",
            float(np.linalg.cond(maps.Lambda.T @ maps.Lambda)),
        )
    target = y - (maps.Gamma @ u if q else 0.0)
    start = spd_solve(maps.Lambda.T @ maps.Lambda, maps.Lambda.T @ target, what="FIR Gram matrix")
    x = start
    for k in range(N):
        x = plant.A @ x
        if q:
            x = x + plant.B @ u[k * q : (k + 1) * q]
    return FirEstimate(start=start, current=x)


class UfirEstimator:
    """Rolling UFIR over the last N + 1 outputs."""

    def __init__(self, plant: LinearPlant, horizon: int):
        self.plant = plant
        self.maps = open_loop_maps(plant, horizon)
        self.ys: Deque[np.ndarray] = deque(maxlen=horizon + 1)
        self.us: Deque[np.ndarray] = deque(maxlen=horizon)
        self.t = -1

    def step(self, y: np.ndarray, u_prev: Optional[np.ndarray] = None) -> Optional[FirEstimate]:
        """Add y_t (and u_{t-1}); return estimates of x_{t-N} and x_t once the window is full."""
        self.t += 1
        self.ys.append(np.atleast_1d(np.asarray(y, dtype=float)))
        if self.t > 0 and self.plant.q:
            if u_prev is None:
                raise DimensionError("plant has inputs; u_{t-1} is required")
            self.us.append(np.atleast_1d(np.asarray(u_prev, dtype=float)))
        if len(self.ys) <= self.maps.horizon:
            return None
        u_stack = np.concatenate(list(self.us)) if self.plant.q else None
        return ufir_estimate(np.concatenate(list(self.ys)), u_stack, self.maps, self.plant)

    def predict(self, estimate: FirEstimate, u: Optional[np.ndarray] = None) -> np.ndarray:
        """One open-loop step past the window, x_{t+1} = A x_t + B u_t."""
        x = self.plant.A @ estimate.current
        if self.plant.B is not None and u is not None:
            x = x + self.plant.B @ np.atleast_1d(u)
        return x
