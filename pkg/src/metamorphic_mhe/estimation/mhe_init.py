"""Metamorphic MHE of the window's initial state with a built-in
Luenberger pre-estimator.

At time t the window holds y_{t-N..t} and u_{t-N..t-1}. The in-window
observer xhat_{i+1} = A_L xhat_i + B u_i + L y_i predicts the outputs
yhat = Lambda_bar xhat + Gamma_bar u + L_N y, and the estimate of x_{t-N}
minimizes

    r |x - xbar|^2 + |Psi y - Gamma_bar u - Lambda_bar x|^2,

r = lambda_bar / lambda, lambda_bar = lambda mu + (1 - lambda) mu_bar.
"""

import logging
import math
from collections import deque
from typing import Deque, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy import linalg

from metamorphic_mhe.errors import ConfigError, DimensionError, InfeasibleError, NotSchurError
from metamorphic_mhe.estimation import qpsolve
from metamorphic_mhe.models.estimation_types import (
    BatchMaps,
    BoundParams,
    BoundResult,
    DecayReport,
    DecayRow,
    ErrorDynamics,
    LambdaAnalysisRow,
    QpProblem,
    QpStatus,
)
from metamorphic_mhe.models.system_types import Box, LinearPlant, Matrix
from metamorphic_mhe.utils.linalg import (
    block_toeplitz_lower,
    min_eig,
    spd_inverse,
    spd_solve,
    spectral_radius,
    symmetrize,
)

logger = logging.getLogger(__name__)


def _powers(A: np.ndarray, count: int) -> List[np.ndarray]:
    out = [np.eye(A.shape[0])]
    for _ in range(count - 1):
        out.append(out[-1] @ A)
    return out


def _stack_maps(
    A: np.ndarray, B: np.ndarray, C: np.ndarray, N: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Observability stack and the B- and identity-driven Toeplitz maps of A."""
    n, p, q = A.shape[0], C.shape[0], B.shape[1]
    CA = [C @ P for P in _powers(A, N + 1)]
    Lam = np.vstack(CA)
    Gam = block_toeplitz_lower([CA[k] @ B for k in range(N)], N + 1, N, (p, q))
    Phi = block_toeplitz_lower(CA[:N], N + 1, N, (p, n))
    return Lam, Gam, Phi


def _check(A: np.ndarray, B: Optional[np.ndarray], C: np.ndarray, N: int) -> np.ndarray:
    if N < 1:
        raise ConfigError(f"horizon must be at least 1, got {N}")
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise DimensionError(f"inconsistent shapes A {A.shape}, C {C.shape}")
    if B is None:
        return np.zeros((n, 0))
    B = np.atleast_2d(B)
    if B.shape[0] != n:
        raise DimensionError(f"B must have {n} rows, got {B.shape}")
    return B


def build_open_loop_maps(
    A: np.ndarray, B: Optional[np.ndarray], C: np.ndarray, N: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Lambda, Gamma, Phi_w) with y-stack = Lambda x + Gamma u + Phi_w w + v."""
    A, C = np.atleast_2d(A), np.atleast_2d(C)
    B = _check(A, B, C, N)
    return _stack_maps(A, B, C, N)


def build_observer_maps(
    A: np.ndarray, B: Optional[np.ndarray], C: np.ndarray, L: np.ndarray, N: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(Lambda_bar, Gamma_bar, Phi_bar, L_N, Psi) of the in-window observer.

    yhat-stack = Lambda_bar xhat + Gamma_bar u + Phi_bar y, Phi_bar = L_N,
    Psi = I - L_N.
    """
    A, C, L = np.atleast_2d(A), np.atleast_2d(C), np.atleast_2d(L)
    B = _check(A, B, C, N)
    if L.shape != (A.shape[0], C.shape[0]):
        raise DimensionError(f"L must be {A.shape[0]}x{C.shape[0]}, got {L.shape}")
    A_L = A - L @ C
    p = C.shape[0]
    CA_L = [C @ P for P in _powers(A_L, N + 1)]
    Lam_bar = np.vstack(CA_L)
    Gam_bar = block_toeplitz_lower([CA_L[k] @ B for k in range(N)], N + 1, N, (p, B.shape[1]))
    L_N = block_toeplitz_lower([CA_L[k] @ L for k in range(N)], N + 1, N + 1, (p, p))
    Psi = np.eye((N + 1) * p) - L_N
    return Lam_bar, Gam_bar, L_N.copy(), L_N, Psi


def observer_noise_map(A: np.ndarray, C: np.ndarray, L: np.ndarray, N: int) -> np.ndarray:
    """Map of w_{t-N..t-1} into Psi y - Gamma_bar u (blocks C A_L^(i-j-1))."""
    A, C, L = np.atleast_2d(A), np.atleast_2d(C), np.atleast_2d(L)
    A_L = A - L @ C
    CA_L = [C @ P for P in _powers(A_L, N)]
    return block_toeplitz_lower(CA_L, N + 1, N, (C.shape[0], A.shape[0]))


def build_batch_maps(plant: LinearPlant, L: np.ndarray, N: int) -> BatchMaps:
    Lam, Gam, Phi_w = build_open_loop_maps(plant.A, plant.B, plant.C, N)
    Lam_bar, Gam_bar, Phi_bar, L_N, Psi = build_observer_maps(plant.A, plant.B, plant.C, L, N)
    return BatchMaps(
        Lambda=Lam,
        Gamma=Gam,
        Phi_w=Phi_w,
        Lambda_bar=Lam_bar,
        Gamma_bar=Gam_bar,
        Phi_bar=Phi_bar,
        L_N=L_N,
        Psi=Psi,
        Phi_w_bar=observer_noise_map(plant.A, plant.C, L, N),
        horizon=N,
    )


class WeightRatio(NamedTuple):
    lambda_bar: float
    ratio: float
    case: Optional[str]
    d_ratio: float


def weight_ratio(lam: float, mu: float, mu_bar: float) -> WeightRatio:
    """lambda_bar, r = lambda_bar / lambda, the case label and dr/dlambda.

    Case "i" is r = 1, "ii" is r > 1 and "iii" is r < 1; labels are only
    given for lambda in (0, 1) with distinct positive mu and mu_bar.
    """
    lambda_bar = lam * mu + (1.0 - lam) * mu_bar
    if lambda_bar <= 0.0:
        raise ConfigError(f"lambda_bar is zero for lambda={lam}, mu={mu}, mu_bar={mu_bar}")
    if lam <= 0.0:
        raise ConfigError("the weight ratio is undefined at lambda = 0")
    ratio = lambda_bar / lam
    case = None
    if 0.0 < lam < 1.0 and mu > 0.0 and mu_bar > 0.0 and mu != mu_bar:
        lhs, rhs = (1.0 - lam) * mu_bar, lam * (1.0 - mu)
        if math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-15):
            case = "i"
        elif lhs > rhs:
            case = "ii"
        else:
            case = "iii"
    return WeightRatio(lambda_bar=lambda_bar, ratio=ratio, case=case, d_ratio=-mu_bar / lam**2)


class InitMheConfig(BaseModel):
    plant: LinearPlant
    L: Matrix
    horizon: int = Field(ge=1)
    lam: float = Field(ge=0.0, le=1.0, alias="lambda")
    mu: float = Field(ge=0.0)
    mu_bar: float = Field(ge=0.0)
    state_box: Optional[Box] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True)

    _maps: BatchMaps = PrivateAttr()

    @model_validator(mode="after")
    def check_config(self) -> "InitMheConfig":
        n, p = self.plant.n, self.plant.p
        if self.L.shape != (n, p):
            raise DimensionError(f"L must be {n}x{p}, got {self.L.shape}")
        if self.horizon < n:
            raise ConfigError(f"horizon {self.horizon} is shorter than the state dimension {n}")
        if self.lam > 0.0 and self.lambda_bar <= 0.0:
            raise ConfigError("mu and mu_bar cannot both be zero when lambda > 0")
        if self.state_box is not None and self.state_box.dim != n:
            raise DimensionError(f"state box must have dimension {n}")
        self._maps = build_batch_maps(self.plant, self.L, self.horizon)
        return self

    @property
    def maps(self) -> BatchMaps:
        return self._maps

    @property
    def A_L(self) -> np.ndarray:
        return self.plant.A - self.L @ self.plant.C

    @property
    def lambda_bar(self) -> float:
        return self.lam * self.mu + (1.0 - self.lam) * self.mu_bar

    @property
    def lambda_tilde(self) -> float:
        return self.lam / self.lambda_bar

    @property
    def ratio(self) -> float:
        """Prior weight lambda_bar / lambda; equals mu at lambda = 1."""
        if self.lam == 0.0:
            return math.inf
        return self.lambda_bar / self.lam


def _stack(values: Optional[np.ndarray], rows: int, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros(0)
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size != rows * width:
        raise DimensionError(f"expected a stack of {rows} x {width} values, got {arr.size}")
    return arr


def solve_initial_state(
    y_stack: np.ndarray,
    u_stack: Optional[np.ndarray],
    prior: np.ndarray,
    maps: BatchMaps,
    config: InitMheConfig,
) -> np.ndarray:
    """Minimizer of r |x - prior|^2 + |Psi y - Gamma_bar u - Lambda_bar x|^2.

    lambda = 0 returns the prior (projected onto the state box when one is
    configured); lambda = 1 uses r = mu. With a state box the problem is
    solved as a QP.
    """
    N, p, q = maps.horizon, config.plant.p, config.plant.q
    prior = np.asarray(prior, dtype=float)
    if config.lam == 0.0:
        if config.state_box is not None:
            return np.clip(prior, config.state_box.lower, config.state_box.upper)
        return prior.copy()

    y = _stack(y_stack, N + 1, p)
    u = _stack(u_stack, N, q)
    target = maps.Psi @ y - (maps.Gamma_bar @ u if q else 0.0)
    r = config.ratio
    S_bar = r * np.eye(prior.size) + maps.Lambda_bar.T @ maps.Lambda_bar
    rhs = r * prior + maps.Lambda_bar.T @ target

    if config.state_box is None:
        return spd_solve(S_bar, rhs, what="S_bar")

    box = config.state_box
    A_in = np.vstack([np.eye(prior.size), -np.eye(prior.size)])
    b_in = np.concatenate([box.upper, -box.lower])
    keep = np.isfinite(b_in)
    sol = qpsolve.solve(QpProblem(H=2.0 * symmetrize(S_bar), g=-2.0 * rhs, A_in=A_in[keep], b_in=b_in[keep]))
    if sol.status == QpStatus.INFEASIBLE:
        raise InfeasibleError("state box is empty", sol.certificate)
    return np.asarray(sol.z)


def prior_update(
    x_opt: np.ndarray,
    u: Optional[np.ndarray],
    y: np.ndarray,
    plant: LinearPlant,
    L: np.ndarray,
) -> np.ndarray:
    """xbar = A x + B u + L (y - C x)."""
    x_opt = np.asarray(x_opt, dtype=float)
    out = plant.A @ x_opt + np.atleast_2d(L) @ (np.atleast_1d(y) - plant.C @ x_opt)
    if plant.B is not None and u is not None:
        out = out + plant.B @ np.atleast_1d(u)
    return out


def error_dynamics(maps: BatchMaps, config: InitMheConfig, L: np.ndarray) -> ErrorDynamics:
    """Closed-loop error recursion of the estimator.

    S1 multiplies [w_{t-N-1}; w_{t-N..t-1}] and S2 multiplies
    [v_{t-N-1}; v_{t-N..t}].
    """
    if not 0.0 < config.lam <= 1.0:
        raise ConfigError("error dynamics need lambda in (0, 1]")
    L = np.atleast_2d(L)
    n = config.plant.n
    r = config.ratio
    A_L = config.plant.A - L @ config.plant.C
    S_bar = symmetrize(r * np.eye(n) + maps.Lambda_bar.T @ maps.Lambda_bar)
    S1 = np.hstack([r * np.eye(n), -maps.Lambda_bar.T @ maps.Phi_w_bar])
    S2 = np.hstack([-r * L, -maps.Lambda_bar.T @ maps.Psi])
    A_bar_L = r * spd_solve(S_bar, A_L, what="S_bar")
    return ErrorDynamics(A_bar_L=A_bar_L, S_bar=S_bar, S1=S1, S2=S2, ratio=r)


def _q_bar(P_L: np.ndarray, gram: np.ndarray, Q_L: np.ndarray, lam_t: float) -> np.ndarray:
    return symmetrize(lam_t * (P_L @ gram + gram @ P_L) + lam_t**2 * gram @ P_L @ gram + Q_L)


def lyapunov_weight(A_L: np.ndarray, Q_L: np.ndarray) -> np.ndarray:
    """P_L with A_L' P_L A_L - P_L + Q_L = 0."""
    rho = spectral_radius(A_L)
    if rho >= 1.0:
        raise NotSchurError(f"A_L is not Schur stable (spectral radius {rho:.6f})", rho)
    return symmetrize(linalg.solve_discrete_lyapunov(np.asarray(A_L).T, Q_L))


def _lambda_tilde(lam: float, mu: float, mu_bar: float) -> float:
    return lam / (lam * mu + (1.0 - lam) * mu_bar)


def decay_monotonicity_report(
    plant: LinearPlant,
    L: np.ndarray,
    horizon: int,
    lambdas: Sequence[float],
    mu: float,
    mu_bar: float,
    Q_L: Optional[np.ndarray] = None,
) -> DecayReport:
    """Check that the Lyapunov decay weight Q_bar_L(lambda) grows with lambda."""
    grid = sorted(float(v) for v in lambdas)
    if len(grid) < 2:
        raise ConfigError("lambda grid needs at least two points")
    L = np.atleast_2d(L)
    n = plant.n
    Q_L = np.eye(n) if Q_L is None else np.atleast_2d(Q_L)
    A_L = plant.A - L @ plant.C
    P_L = lyapunov_weight(A_L, Q_L)
    Lam_bar = build_observer_maps(plant.A, plant.B, plant.C, L, horizon)[0]
    gram = Lam_bar.T @ Lam_bar

    for lam in grid:
        if not (0.0 < mu < mu_bar or mu_bar < mu <= mu_bar + 1.0 / lam):
            logger.warning(f"decay monotonicity conditions do not hold at lambda={lam}")

    Qs = [_q_bar(P_L, gram, Q_L, _lambda_tilde(lam, mu, mu_bar)) for lam in grid]
    rows = [
        DecayRow(
            lambda_low=grid[i],
            lambda_high=grid[i + 1],
            min_eig_diff=min_eig(Qs[i + 1] - Qs[i]),
            min_eig_QbarL_low=min_eig(Qs[i]),
            min_eig_QbarL_high=min_eig(Qs[i + 1]),
        )
        for i in range(len(grid) - 1)
    ]

    lam0, h = 0.5, 1e-6
    lam_bar0 = lam0 * mu + (1.0 - lam0) * mu_bar
    fd = (_lambda_tilde(lam0 + h, mu, mu_bar) - _lambda_tilde(lam0 - h, mu, mu_bar)) / (2 * h)
    exact = mu_bar / lam_bar0**2
    err1 = abs(fd - exact) / max(1.0, abs(exact))
    fd_sq = (
        _lambda_tilde(lam0 + h, mu, mu_bar) ** 2 - _lambda_tilde(lam0 - h, mu, mu_bar) ** 2
    ) / (2 * h)
    exact_sq = 2.0 * lam0 * mu_bar / lam_bar0**3
    err2 = abs(fd_sq - exact_sq) / max(1.0, abs(exact_sq))

    passed = all(r.min_eig_diff > 0.0 for r in rows)
    logger.info(f"Decay-rate monotonicity over {len(grid)} lambdas: {'PASS' if passed else 'FAIL'}")
    return DecayReport(
        rows=rows,
        passed=passed,
        d_lambda_tilde_rel_error=err1,
        d_lambda_tilde_sq_rel_error=err2,
        derivatives_ok=err1 <= 1e-6 and err2 <= 1e-6,
    )


def noise_bound(box: Box) -> float:
    """Largest Euclidean norm of a point in the box."""
    return float(np.linalg.norm(np.maximum(np.abs(box.lower), np.abs(box.upper))))


def bound_sequence(
    plant: LinearPlant,
    L: np.ndarray,
    maps: BatchMaps,
    config: InitMheConfig,
    z_w: float,
    z_v: float,
    x0_norm: float,
    xbar0_norm: float,
    steps: int,
) -> BoundResult:
    """Bound zeta_t on |e_{t-N}| from zeta_0 = b0, zeta_t = a zeta_{t-1} + b.

    All matrix norms are Frobenius norms.
    """
    if not 0.0 < config.lam < 1.0:
        raise ConfigError("bounds are defined for lambda in (0, 1)")
    L = np.atleast_2d(L)
    n, N = plant.n, maps.horizon
    dyn = error_dynamics(maps, config, L)
    S_inv = spd_inverse(dyn.S_bar, what="S_bar")
    fro = np.linalg.norm
    gram = maps.Lambda_bar.T @ maps.Lambda_bar

    a_l = float(fro(plant.A - L @ plant.C))
    rS = float(fro(dyn.ratio * S_inv))
    theta1 = float(fro(maps.Lambda_bar.T @ maps.Phi_w_bar))
    theta2 = float(fro(maps.Lambda_bar.T @ maps.Psi))
    l_norm = float(fro(L))
    z_bar = z_w + l_norm * z_v
    theta_bar = theta1 * math.sqrt(N) * z_w + theta2 * math.sqrt(N + 1) * z_v
    a = a_l * rS
    b = rS * z_bar + float(fro(S_inv)) * theta_bar
    b0 = (
        float(fro(np.eye(n) - S_inv @ gram)) * x0_norm
        + rS * xbar0_norm
        + float(fro(S_inv)) * theta_bar
    )
    eta = float(np.linalg.eigvalsh(symmetrize(gram))[0])
    params = BoundParams(
        a=a, b=b, b0=b0, a_l=a_l, theta1=theta1, theta2=theta2, l=l_norm,
        z_w=z_w, z_v=z_v, z_bar=z_bar, theta_bar=theta_bar, eta=eta, n=n,
    )

    zeta = [b0]
    for _ in range(steps):
        zeta.append(a * zeta[-1] + b)
    diverges = a >= 1.0
    zeta_inf = None if diverges else b / (1.0 - a)
    zeta_bar = [z / b for z in zeta] if b > 0.0 else [math.inf for _ in zeta]
    condition_value = a_l * math.sqrt(n) / (1.0 + config.lambda_tilde * eta)
    if diverges:
        logger.warning(f"bound sequence diverges at lambda={config.lam} (a={a:.4f})")
    return BoundResult(
        params=params,
        zeta=zeta,
        zeta_inf=zeta_inf,
        zeta_bar=zeta_bar,
        zeta_bar_inf=None if diverges else 1.0 / (1.0 - a),
        condition_a=condition_value < 1.0,
        condition_a_value=condition_value,
        diverges=diverges,
        rho_A_bar_L=spectral_radius(dyn.A_bar_L),
    )


def analysis_table(
    plant: LinearPlant,
    L: np.ndarray,
    horizon: int,
    lambdas: Sequence[float],
    mu: float,
    mu_bar: float,
    z_w: float,
    z_v: float,
    x0_norm: float = 0.0,
    xbar0_norm: float = 0.0,
) -> List[LambdaAnalysisRow]:
    """Per-lambda stability, bound and decay-rate summary."""
    grid = sorted(float(v) for v in lambdas)
    decay = (
        decay_monotonicity_report(plant, L, horizon, grid, mu, mu_bar) if len(grid) > 1 else None
    )
    rows = []
    for i, lam in enumerate(grid):
        config = InitMheConfig(plant=plant, L=L, horizon=horizon, lam=lam, mu=mu, mu_bar=mu_bar)
        res = bound_sequence(plant, L, config.maps, config, z_w, z_v, x0_norm, xbar0_norm, 0)
        rows.append(
            LambdaAnalysisRow(
                lam=lam,
                rho_AbarL=res.rho_A_bar_L,
                a=res.params.a,
                b=res.params.b,
                zeta_inf=res.zeta_inf,
                zeta_bar_inf=res.zeta_bar_inf,
                condition_a_satisfied=res.condition_a,
                min_eig_QbarL_diff=decay.rows[i].min_eig_diff if decay and i < len(decay.rows) else None,
            )
        )
    return rows


class InitialStateMhe:
    """Rolling estimator producing xhat_{t-N,t} once N + 1 outputs are in."""

    def __init__(self, config: InitMheConfig, x_bar0: np.ndarray):
        self.config = config
        self.maps = config.maps
        self.x_bar0 = np.asarray(x_bar0, dtype=float)
        N = config.horizon
        self.ys: Deque[np.ndarray] = deque(maxlen=N + 2)
        self.us: Deque[np.ndarray] = deque(maxlen=N + 1)
        self.t = -1
        self.previous: Optional[np.ndarray] = None
        self.prior: Optional[np.ndarray] = None

    def step(self, y: np.ndarray, u_prev: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        """Add y_t (and u_{t-1}); return the estimate of x_{t-N} when available."""
        plant, N = self.config.plant, self.config.horizon
        self.t += 1
        self.ys.append(np.atleast_1d(np.asarray(y, dtype=float)))
        if self.t > 0 and plant.q:
            if u_prev is None:
                raise DimensionError("plant has inputs; u_{t-1} is required")
            self.us.append(np.atleast_1d(np.asarray(u_prev, dtype=float)))
        if self.t < N:
            return None

        if self.t == N:
            self.prior = self.x_bar0.copy()
        else:
            u_old = self.us[0] if plant.q else None
            self.prior = prior_update(self.previous, u_old, self.ys[0], plant, self.config.L)
        y_stack = np.concatenate(list(self.ys)[-(N + 1) :])
        u_stack = np.concatenate(list(self.us)[-N:]) if plant.q else None
        self.previous = solve_initial_state(y_stack, u_stack, self.prior, self.maps, self.config)
        return self.previous

    @property
    def window_start(self) -> int:
        return self.t - self.config.horizon

    def current_estimate(self) -> np.ndarray:
        """Estimate of x_t from the in-window observer started at xhat_{t-N,t}."""
        if self.previous is None:
            raise ConfigError("no estimate yet")
        plant, L, N = self.config.plant, self.config.L, self.config.horizon
        ys = list(self.ys)[-(N + 1) :]
        us = list(self.us)[-N:] if plant.q else [None] * N
        x = self.previous
        for i in range(N):
            x = prior_update(x, us[i], ys[i], plant, L)
        return x
