"""Riccati iterations for the arrival-cost weight and the lambda-family of
noise weights Q_e."""

import logging
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from metamorphic_mhe.errors import ConfigError, ConvergenceError, DimensionError
from metamorphic_mhe.estimation.linmodel import augment
from metamorphic_mhe.models.estimation_types import (
    MetamorphicWeights,
    MonotonicityReport,
    MonotonicityRow,
    RiccatiIterate,
)
from metamorphic_mhe.models.system_types import AugmentedPlant, LinearPlant, ObserverGain
from metamorphic_mhe.utils.linalg import min_eig, spd_inverse, spd_solve, symmetrize

logger = logging.getLogger(__name__)

StepFn = Callable[[RiccatiIterate], RiccatiIterate]


def _innovation_solve(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    return spd_solve(S, B, what="innovation covariance R + C P C'")


def are_step(
    P: RiccatiIterate,
    A: np.ndarray,
    C: np.ndarray,
    G: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
) -> RiccatiIterate:
    """P+ = G Q G' + A P A' - A P C' (R + C P C')^-1 C P A'."""
    X = P.value
    if X.shape != A.shape or C.shape[1] != A.shape[0]:
        raise DimensionError(f"iterate {X.shape} does not match A {A.shape} / C {C.shape}")
    APC = A @ X @ C.T
    S = R + C @ X @ C.T
    nxt = G @ Q @ G.T + A @ X @ A.T - APC @ _innovation_solve(S, APC.T)
    return RiccatiIterate(value=symmetrize(nxt), step=P.step + 1)


def qe_weights(lam: float, M: np.ndarray, Q: np.ndarray) -> MetamorphicWeights:
    """Q_e^-1 = ((1 - lam) / lam) M + blockdiag(Q^-1, 0)."""
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must lie in (0, 1) for Q_e, got {lam}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    m = Q.shape[0]
    if M.shape[0] < m:
        raise DimensionError(f"M is {M.shape}, Q is {Q.shape}")
    Qe_inv = ((1.0 - lam) / lam) * M
    Qe_inv[:m, :m] += spd_inverse(Q, what="Q")
    Qe_inv = symmetrize(Qe_inv)
    Qe = spd_inverse(Qe_inv, what="Q_e^-1")
    return MetamorphicWeights(lam=lam, M=M, Q=Q, Qe_inv=Qe_inv, Qe=Qe)


def derivative_qe_inv(lam: float, M: np.ndarray) -> np.ndarray:
    return -np.asarray(M, dtype=float) / lam**2


def derivative_qe(weights: MetamorphicWeights) -> np.ndarray:
    """dQ_e/dlambda = Q_e M Q_e / lambda^2."""
    return symmetrize(weights.Qe @ weights.M @ weights.Qe) / weights.lam**2


def are_step_augmented(
    P: RiccatiIterate, aug: AugmentedPlant, weights: MetamorphicWeights, R: np.ndarray
) -> RiccatiIterate:
    return are_step(P, aug.A_e, aug.C_e, aug.G_e, weights.Qe, np.atleast_2d(R))


def augmented_are_residual(
    P: RiccatiIterate, aug: AugmentedPlant, weights: MetamorphicWeights, R: np.ndarray
) -> float:
    """Frobenius norm of ARE(P) - P."""
    return float(np.linalg.norm(are_step_augmented(P, aug, weights, R).value - P.value))


def steady_state(
    step_fn: StepFn, P0: RiccatiIterate, tol: float = 1e-12, max_iter: int = 100_000
) -> RiccatiIterate:
    """Fixed point of ``step_fn`` by plain iteration.

    Stops when ||P_{k+1} - P_k||_F <= tol * max(1, ||P_k||_F); the returned
    step index is the number of iterations taken.
    """
    P = RiccatiIterate(value=P0.value, step=0)
    diff = np.inf
    for k in range(1, max_iter + 1):
        nxt = step_fn(P)
        diff = float(np.linalg.norm(nxt.value - P.value))
        P = RiccatiIterate(value=nxt.value, step=k)
        if diff <= tol * max(1.0, float(np.linalg.norm(P.value))):
            logger.debug(f"Riccati iteration converged after {k} steps")
            return P
    raise ConvergenceError("Riccati iteration did not converge", max_iter, diff)


def steady_state_augmented(
    aug: AugmentedPlant,
    weights: MetamorphicWeights,
    R: np.ndarray,
    P0: Optional[RiccatiIterate] = None,
    tol: float = 1e-12,
) -> RiccatiIterate:
    """Phi_inf for the augmented model, iterated from P0 (identity by default)."""
    start = P0 if P0 is not None else RiccatiIterate(value=np.eye(aug.dim))
    return steady_state(lambda P: are_step_augmented(P, aug, weights, R), start, tol=tol)


def metamorphic_kalman_gain(
    P: RiccatiIterate, aug: AugmentedPlant, R: np.ndarray
) -> np.ndarray:
    """L_e = A_e P C_e' (R + C_e P C_e')^-1."""
    X = P.value
    S = np.atleast_2d(R) + aug.C_e @ X @ aug.C_e.T
    return _innovation_solve(S, aug.C_e @ X @ aug.A_e.T).T


def metamorphic_kalman_filter(
    aug: AugmentedPlant,
    weights: MetamorphicWeights,
    R: np.ndarray,
    x0: np.ndarray,
    Phi0: RiccatiIterate,
    ys: np.ndarray,
) -> np.ndarray:
    """Predictor-form filter on the augmented model.

    x_{k+1} = A_e x_k + L_e,k (y_k - C_e x_k), Phi_{k+1} = ARE(Phi_k).
    Returns the (T + 1) x 2n array of x_0 .. x_T for T measurements.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    x = np.asarray(x0, dtype=float).copy()
    P = Phi0
    out = [x.copy()]
    for y in ys:
        L_e = metamorphic_kalman_gain(P, aug, R)
        x = aug.A_e @ x + L_e @ (y - aug.C_e @ x)
        P = are_step_augmented(P, aug, weights, R)
        out.append(x.copy())
    return np.array(out)


def phi_trajectory(
    aug: AugmentedPlant,
    weights: MetamorphicWeights,
    R: np.ndarray,
    Phi0: RiccatiIterate,
    k_max: int,
) -> list[RiccatiIterate]:
    """Phi_0 .. Phi_{k_max}."""
    out = [Phi0]
    for _ in range(k_max):
        out.append(are_step_augmented(out[-1], aug, weights, R))
    return out


def phi_monotonicity_report(
    plant: LinearPlant,
    observer: ObserverGain,
    M: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    Phi0: np.ndarray,
    lambdas: Sequence[float],
    k_max: int,
    mode: Literal["theorem", "corollary"] = "theorem",
) -> MonotonicityReport:
    """Check that Phi_k grows with lambda along a lambda grid.

    In "theorem" mode every lambda starts from the same Phi0 and the rows cover
    k = 0..k_max. In "corollary" mode each lambda uses its own steady state
    Phi_inf (reported as k = k_max) and, when G and L are square and
    nonsingular, differences must be strictly positive definite.
    """
    grid = sorted(float(v) for v in lambdas)
    if len(grid) < 2:
        raise ConfigError("lambda grid needs at least two points")
    aug = augment(plant, observer)
    start = RiccatiIterate(value=symmetrize(np.atleast_2d(np.asarray(Phi0, dtype=float))))

    if mode == "theorem":
        series = [phi_trajectory(aug, qe_weights(lam, M, Q), R, start, k_max) for lam in grid]
        ks = range(k_max + 1)
    elif mode == "corollary":
        series = [
            [steady_state_augmented(aug, qe_weights(lam, M, Q), R, start)] for lam in grid
        ]
        ks = range(1)
    else:
        raise ConfigError(f"unknown monotonicity mode: {mode}")

    strict = (
        mode == "corollary"
        and plant.G.shape[0] == plant.G.shape[1]
        and observer.L.shape[0] == observer.L.shape[1]
        and np.linalg.matrix_rank(plant.G) == plant.n
        and np.linalg.matrix_rank(observer.L) == plant.n
    )

    rows: list[MonotonicityRow] = []
    for i in range(len(grid) - 1):
        for j in ks:
            low, high = series[i][j].value, series[i + 1][j].value
            diff = min_eig(high - low)
            bound = 1e-12 if strict else -1e-9 * (1.0 + float(np.linalg.norm(high)))
            rows.append(
                MonotonicityRow(
                    lambda_low=grid[i],
                    lambda_high=grid[i + 1],
                    k=j if mode == "theorem" else k_max,
                    min_eig_diff=diff,
                    passed=diff >= bound,
                )
            )
    passed = all(r.passed for r in rows)
    logger.info(
        f"Phi monotonicity ({mode}) over {len(grid)} lambdas: {'PASS' if passed else 'FAIL'}"
    )
    return MonotonicityReport(mode=mode, rows=rows, passed=passed)
