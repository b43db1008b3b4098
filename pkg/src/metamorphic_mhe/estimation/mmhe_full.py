"""Metamorphic MHE on the observer-augmented model.

The decision vector of a window starting at time s with K measurements is
z = [chi_s, wbar_s, ..., wbar_{s+K-1}], where chi is the augmented state
[observer estimate; observer error] and wbar = [w; v] the augmented noise.
For lambda in (0, 1) the window cost is the normalized metamorphic cost

    |chi_s - prior|^2_{Phi^-1} + sum |wbar_k|^2_{Q_e^-1} + sum |y_k - C_e chi_k|^2_{R^-1}

with Q_e^-1 = ((1 - lambda) / lambda) M + blockdiag(Q^-1, 0). At lambda = 0
only sum |wbar_k|^2_M remains and the estimator follows the pre-estimator.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from metamorphic_mhe.errors import (
    ConfigError,
    DimensionError,
    InfeasibleError,
    WindowNotReadyError,
)
from metamorphic_mhe.estimation import qpsolve
from metamorphic_mhe.estimation.linmodel import augment
from metamorphic_mhe.estimation.riccati import are_step_augmented, qe_weights
from metamorphic_mhe.estimation.setops import disturbance_box, is_rpi
from metamorphic_mhe.models.estimation_types import (
    MetamorphicWeights,
    QpProblem,
    QpSolution,
    QpStatus,
    RiccatiIterate,
)
from metamorphic_mhe.models.system_types import (
    AugmentedPlant,
    Box,
    LinearPlant,
    Matrix,
    ObserverGain,
    Vector,
)
from metamorphic_mhe.utils.linalg import is_symmetric, min_eig, spd_inverse

logger = logging.getLogger(__name__)


class MmheConfig(BaseModel):
    """Configuration of one metamorphic MHE instance."""

    plant: LinearPlant
    observer: ObserverGain
    lam: float = Field(ge=0.0, lt=1.0, alias="lambda")
    M: Matrix
    Q: Matrix
    R: Matrix
    horizon: int = Field(ge=1)
    state_box: Box
    error_box: Optional[Box] = None
    process_box: Box
    measurement_box: Box
    x0_prior: Vector
    Phi0: Optional[Matrix] = None
    qp_tol: float = Field(default=1e-8, gt=0.0)

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True)

    _aug: AugmentedPlant = PrivateAttr()
    _weights: Optional[MetamorphicWeights] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def check_config(self) -> "MmheConfig":
        n, m, p = self.plant.n, self.plant.m, self.plant.p
        if self.observer.L.shape != (n, p):
            raise DimensionError(f"observer gain must be {n}x{p}")
        if self.M.shape != (m + p, m + p):
            raise DimensionError(f"M must be {m + p}x{m + p}, got {self.M.shape}")
        if not is_symmetric(self.M) or min_eig(self.M) <= 0.0:
            raise ConfigError("M must be symmetric positive definite")
        if self.Q.shape != (m, m) or self.R.shape != (p, p):
            raise DimensionError("Q must be m x m and R must be p x p")
        if self.state_box.dim != n:
            raise DimensionError(f"state box must have dimension {n}")
        if self.process_box.dim != m or self.measurement_box.dim != p:
            raise DimensionError("noise boxes must match the noise dimensions")
        for name, box in (("process", self.process_box), ("measurement", self.measurement_box)):
            if not (np.all(box.lower < 0.0) and np.all(box.upper > 0.0)):
                raise ConfigError(f"{name} noise box must contain the origin in its interior")
        if self.x0_prior.shape != (2 * n,):
            raise DimensionError(f"initial prior must have {2 * n} entries")
        if self.error_box is not None:
            if self.error_box.dim != n:
                raise DimensionError(f"error box must have dimension {n}")
            Q_box = disturbance_box(
                self.plant.G, self.process_box, self.observer.L, self.measurement_box
            )
            if not is_rpi(self.observer.A_L, Q_box, self.error_box, tol=1e-12):
                raise ConfigError("error box is not robustly invariant for A - LC")
        if self.lam > 0.0:
            if self.Phi0 is None or self.Phi0.shape != (2 * n, 2 * n):
                raise DimensionError(f"Phi0 must be {2 * n}x{2 * n} when lambda > 0")
            if not is_symmetric(self.Phi0) or min_eig(self.Phi0) <= 0.0:
                raise ConfigError("Phi0 must be symmetric positive definite")
            self._weights = qe_weights(self.lam, self.M, self.Q)
        self._aug = augment(self.plant, self.observer)
        return self

    @property
    def augmented(self) -> AugmentedPlant:
        return self._aug

    @property
    def weights(self) -> Optional[MetamorphicWeights]:
        return self._weights

    @property
    def noise_dim(self) -> int:
        return self.plant.m + self.plant.p

    @property
    def augmented_state_box(self) -> Box:
        """X-bar = X x E, with E unbounded when no error box is configured."""
        error = self.error_box if self.error_box is not None else Box.unbounded(self.plant.n)
        return self.state_box.product(error)

    @property
    def augmented_noise_box(self) -> Box:
        """W-bar = W x V."""
        return self.process_box.product(self.measurement_box)


@dataclass
class HorizonWindow:
    """Most recent measurements with contiguous time indices."""

    horizon: int
    indices: Deque[int] = field(default_factory=deque)
    values: Deque[np.ndarray] = field(default_factory=deque)

    def push(self, index: int, y: np.ndarray) -> None:
        if self.indices and index != self.indices[-1] + 1:
            raise ValueError(f"measurement index {index} does not follow {self.indices[-1]}")
        self.indices.append(index)
        self.values.append(np.asarray(y, dtype=float))
        while len(self.indices) > self.horizon:
            self.indices.popleft()
            self.values.popleft()

    def copy(self) -> "HorizonWindow":
        return HorizonWindow(self.horizon, deque(self.indices), deque(self.values))

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def is_full(self) -> bool:
        return len(self.indices) == self.horizon

    @property
    def start(self) -> int:
        return self.indices[0]

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


@dataclass(frozen=True)
class ArrivalRecord:
    """Estimator output at ``index`` with the arrival weight of that index."""

    index: int
    estimate: np.ndarray
    Phi: Optional[RiccatiIterate]
    cost: float


@dataclass
class MmheState:
    time: int
    window: HorizonWindow
    history: Deque[ArrivalRecord]
    Phi: Optional[RiccatiIterate]
    trajectory: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def record(self, index: int) -> ArrivalRecord:
        for rec in self.history:
            if rec.index == index:
                return rec
        raise WindowNotReadyError(f"no arrival record for time {index}")

    @property
    def arrival(self) -> ArrivalRecord:
        """Prior of the window that the next measurement completes."""
        return self.record(max(0, self.time + 1 - self.window.horizon))

    @property
    def carried_cost(self) -> float:
        return self.history[-1].cost


class MmheStepRecord(BaseModel):
    """Per-step log line of the estimator."""

    time: int
    measurement: Vector
    estimate: Vector
    observer_block: Vector
    error_block: Vector
    objective: float
    normalized_objective: float
    carried_cost: float
    status: QpStatus
    active_constraints: int

    model_config = ConfigDict(arbitrary_types_allowed=True)


@dataclass
class CondensedQp:
    qp: QpProblem
    propagation: List[np.ndarray]
    constant: float
    arrival_hessian: Optional[np.ndarray]
    window_start: int

    @property
    def state_dim(self) -> int:
        return self.propagation[0].shape[0]

    def trajectory(self, z: np.ndarray) -> np.ndarray:
        return np.array([X @ z for X in self.propagation])

    def noise(self, z: np.ndarray, noise_dim: int) -> np.ndarray:
        return z[self.state_dim :].reshape(-1, noise_dim)


def initial_state(config: MmheConfig) -> MmheState:
    Phi = RiccatiIterate(value=config.Phi0) if config.Phi0 is not None else None
    history: Deque[ArrivalRecord] = deque(maxlen=config.horizon + 1)
    history.append(ArrivalRecord(0, np.array(config.x0_prior), Phi, 0.0))
    return MmheState(time=0, window=HorizonWindow(config.horizon), history=history, Phi=Phi)


def _propagation_maps(aug: AugmentedPlant, K: int) -> List[np.ndarray]:
    """Maps X_k with chi_k = X_k z for k = 0..K."""
    nx, r = aug.dim, aug.noise_dim
    X = np.zeros((nx, nx + K * r))
    X[:, :nx] = np.eye(nx)
    maps = [X]
    for k in range(K):
        X = aug.A_e @ X
        X[:, nx + k * r : nx + (k + 1) * r] += aug.G_e
        maps.append(X)
    return maps


def _box_rows(F: np.ndarray, f: np.ndarray, box: Box) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of lower <= F z + f <= upper, skipping infinite bounds."""
    up = np.isfinite(box.upper)
    lo = np.isfinite(box.lower)
    A = np.vstack([F[up], -F[lo]])
    b = np.concatenate([box.upper[up] - f[up], f[lo] - box.lower[lo]])
    return A, b


def _constraints(
    maps: List[np.ndarray], ys: np.ndarray, config: MmheConfig
) -> Tuple[np.ndarray, np.ndarray]:
    aug = config.augmented
    nx, r = aug.dim, aug.noise_dim
    d = maps[0].shape[1]
    x_box, w_box, v_box = config.augmented_state_box, config.augmented_noise_box, config.measurement_box
    blocks = [_box_rows(X, np.zeros(nx), x_box) for X in maps]
    for k, y in enumerate(ys):
        E = np.zeros((r, d))
        E[:, nx + k * r : nx + (k + 1) * r] = np.eye(r)
        blocks.append(_box_rows(E, np.zeros(r), w_box))
        blocks.append(_box_rows(-aug.C_e @ maps[k], y, v_box))
    A_in = np.vstack([A for A, _ in blocks]) if blocks else np.zeros((0, d))
    b_in = np.concatenate([b for _, b in blocks]) if blocks else np.zeros(0)
    return A_in.reshape(-1, d), b_in


def build_condensed_qp(
    window: HorizonWindow,
    state: MmheState,
    config: MmheConfig,
    require_full: bool = True,
) -> CondensedQp:
    """Condense the window problem into a QP over the initial state and noises.

    The QP objective plus ``constant`` equals the window cost without the
    carried optimal cost of earlier windows.
    """
    if len(window) == 0 or (require_full and not window.is_full):
        raise WindowNotReadyError(
            f"window holds {len(window)} of {config.horizon} measurements"
        )
    aug = config.augmented
    nx, r = aug.dim, aug.noise_dim
    K = len(window)
    ys = window.as_array()
    maps = _propagation_maps(aug, K)
    d = nx + K * r
    arrival = state.record(window.start)
    prior = arrival.estimate

    H = np.zeros((d, d))
    g = np.zeros(d)
    if config.lam > 0.0:
        weights = config.weights
        Phi_inv = spd_inverse(arrival.Phi.value, what="arrival weight Phi")
        R_inv = spd_inverse(config.R, what="R")
        H[:nx, :nx] += Phi_inv
        g[:nx] -= Phi_inv @ prior
        constant = float(prior @ Phi_inv @ prior)
        noise_weight = weights.Qe_inv
        for k, y in enumerate(ys):
            Y = aug.C_e @ maps[k]
            H += Y.T @ R_inv @ Y
            g -= Y.T @ R_inv @ y
            constant += float(y @ R_inv @ y)
        arrival_hessian = Phi_inv
    else:
        # ties in the initial state are broken toward the prior
        eps = 1e-8 * float(np.trace(config.M)) / r
        H[:nx, :nx] += eps * np.eye(nx)
        g[:nx] -= eps * prior
        constant = eps * float(prior @ prior)
        noise_weight = config.M
        arrival_hessian = None
    for k in range(K):
        sl = slice(nx + k * r, nx + (k + 1) * r)
        H[sl, sl] += noise_weight
    H = H + H.T
    g = 2.0 * g

    A_in, b_in = _constraints(maps, ys, config)
    qp = QpProblem(H=H, g=g, A_in=A_in, b_in=b_in)
    return CondensedQp(
        qp=qp,
        propagation=maps,
        constant=constant,
        arrival_hessian=arrival_hessian,
        window_start=window.start,
    )


def _advance(
    y_new: np.ndarray, state: MmheState, config: MmheConfig
) -> Tuple[HorizonWindow, CondensedQp]:
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    if y_new.shape != (config.plant.p,):
        raise DimensionError(f"measurement must have {config.plant.p} entries")
    window = state.window.copy()
    window.push(state.time, y_new)
    return window, build_condensed_qp(window, state, config, require_full=False)


def _solve(cqp: CondensedQp, config: MmheConfig) -> QpSolution:
    sol = qpsolve.solve(cqp.qp, tol=config.qp_tol)
    if sol.status == QpStatus.INFEASIBLE:
        raise InfeasibleError(
            f"window starting at {cqp.window_start} is infeasible", sol.certificate
        )
    if sol.status == QpStatus.ITERATION_LIMIT:
        logger.warning(
            f"QP for window starting at {cqp.window_start} stopped at the iteration "
            f"limit (KKT residual {sol.kkt_residual:.3e})"
        )
    return sol


def _finish(
    y_new: np.ndarray,
    state: MmheState,
    config: MmheConfig,
    window: HorizonWindow,
    cqp: CondensedQp,
    z: np.ndarray,
    sol: Optional[QpSolution],
    objective: float,
    normalized: float,
    carried: float,
) -> Tuple[np.ndarray, MmheState, MmheStepRecord]:
    aug = config.augmented
    trajectory = cqp.trajectory(z)
    estimate_e = trajectory[-1]
    T = state.time + 1

    Phi = None
    if config.lam > 0.0:
        Phi = are_step_augmented(state.Phi, aug, config.weights, config.R)
    history = deque(state.history, maxlen=config.horizon + 1)
    history.append(ArrivalRecord(T, estimate_e, Phi, carried))

    new_state = MmheState(
        time=T,
        window=window,
        history=history,
        Phi=Phi,
        trajectory=trajectory,
        noise=cqp.noise(z, aug.noise_dim),
    )
    n = aug.n
    record = MmheStepRecord(
        time=T,
        measurement=y_new,
        estimate=aug.plant_state(estimate_e),
        observer_block=estimate_e[:n],
        error_block=estimate_e[n:],
        objective=objective,
        normalized_objective=normalized,
        carried_cost=carried,
        status=sol.status if sol is not None else QpStatus.OPTIMAL,
        active_constraints=len(sol.active_set) if sol is not None else 0,
    )
    logger.debug(
        f"t={T} objective={objective:.6g} status={record.status.value} "
        f"active={record.active_constraints}"
    )
    return aug.plant_state(estimate_e), new_state, record


def lambda_zero_step(
    y_new: np.ndarray, state: MmheState, config: MmheConfig
) -> Tuple[np.ndarray, MmheState, MmheStepRecord]:
    """Step of the lambda = 0 estimator, minimizing sum wbar' M wbar."""
    if config.lam != 0.0:
        raise ConfigError("lambda_zero_step requires lambda = 0")
    window, cqp = _advance(y_new, state, config)
    prior = state.record(window.start).estimate
    z0 = np.concatenate([prior, np.zeros(cqp.qp.dim - prior.size)])
    sol: Optional[QpSolution] = None
    if np.all(cqp.qp.A_in @ z0 <= cqp.qp.b_in + config.qp_tol):
        z = z0
    else:
        sol = _solve(cqp, config)
        z = sol.z
    noise = cqp.noise(z, config.noise_dim)
    objective = float(np.einsum("ki,ij,kj->", noise, config.M, noise))
    return _finish(y_new, state, config, window, cqp, z, sol, objective, objective, objective)


def step(
    y_new: np.ndarray, state: MmheState, config: MmheConfig
) -> Tuple[np.ndarray, MmheState, MmheStepRecord]:
    """Consume y_{T} and return the plant estimate at T + 1 with the new state.

    The input state is left untouched; on infeasibility InfeasibleError is
    raised and the caller keeps the previous state.
    """
    if config.lam == 0.0:
        return lambda_zero_step(y_new, state, config)
    window, cqp = _advance(y_new, state, config)
    sol = _solve(cqp, config)
    objective = sol.objective + cqp.constant
    previous = state.record(window.start).cost
    carried = config.lam * objective + previous
    normalized = objective + previous / config.lam
    return _finish(y_new, state, config, window, cqp, sol.z, sol, objective, normalized, carried)


def window_cost(
    z: np.ndarray, cqp: CondensedQp, previous_cost: float, lam: float
) -> float:
    """Normalized window cost at z, including the carried constant."""
    return float(0.5 * z @ cqp.qp.H @ z + cqp.qp.g @ z) + cqp.constant + previous_cost / lam


def phi_at(config: MmheConfig, lam: float, index: int) -> np.ndarray:
    """Phi_index for a different lambda, iterated from the configured Phi0."""
    weights = qe_weights(lam, config.M, config.Q)
    P = RiccatiIterate(value=config.Phi0)
    for _ in range(index):
        P = are_step_augmented(P, config.augmented, weights, config.R)
    return P.value


def cost_lambda_derivative(
    z: np.ndarray, state: MmheState, config: MmheConfig, delta: float = 1e-6
) -> float:
    """d(normalized window cost)/d(lambda) at a fixed decision z.

    Equals -(1/lambda^2) sum wbar' M wbar - e' Phi^-1 (dPhi/dlambda) Phi^-1 e,
    e = chi_s - prior, with dPhi/dlambda by central differences. The window
    is the one that ``state`` last solved.
    """
    if not 0.0 < config.lam < 1.0:
        raise ConfigError("cost derivative is defined for lambda in (0, 1)")
    if state.trajectory is None:
        raise WindowNotReadyError("state holds no solved window")
    nx, r = config.augmented.dim, config.noise_dim
    start = state.time - (state.trajectory.shape[0] - 1)
    arrival = state.record(start)
    noise = z[nx:].reshape(-1, r)
    e = z[:nx] - arrival.estimate
    Phi_inv = spd_inverse(arrival.Phi.value)
    dPhi = (phi_at(config, config.lam + delta, start) - phi_at(config, config.lam - delta, start)) / (
        2.0 * delta
    )
    noise_term = -float(np.einsum("ki,ij,kj->", noise, config.M, noise)) / config.lam**2
    return noise_term - float(e @ Phi_inv @ dPhi @ Phi_inv @ e)


class MetamorphicMhe:
    """Rolling estimator wrapping ``step`` with its mutable state."""

    def __init__(self, config: MmheConfig):
        self.config = config
        self.state = initial_state(config)
        self.records: List[MmheStepRecord] = []

    @property
    def estimate(self) -> np.ndarray:
        return self.config.augmented.plant_state(self.state.history[-1].estimate)

    @property
    def augmented_estimate(self) -> np.ndarray:
        return self.state.history[-1].estimate

    def step(self, y: Any) -> np.ndarray:
        estimate, self.state, record = step(y, self.state, self.config)
        self.records.append(record)
        return estimate

    def run(self, ys: np.ndarray) -> np.ndarray:
        """Augmented estimates at times 0..T for measurements y_0..y_{T-1}."""
        out = [self.augmented_estimate.copy()]
        for y in np.atleast_2d(ys):
            self.step(y)
            out.append(self.augmented_estimate.copy())
        return np.array(out)
