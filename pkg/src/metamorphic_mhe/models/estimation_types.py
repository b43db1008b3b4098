from enum import Enum
from typing import Any, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from metamorphic_mhe.errors import DimensionError
from metamorphic_mhe.models.system_types import Matrix, Vector
from metamorphic_mhe.utils.linalg import is_symmetric, min_eig


class RiccatiIterate(BaseModel):
    """Arrival-cost weight Pi_t or Phi_t together with its step index."""

    value: Matrix
    step: int = Field(default=0, ge=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_symmetric(self) -> "RiccatiIterate":
        if not is_symmetric(self.value, rtol=1e-10):
            raise ValueError("Riccati iterate must be symmetric")
        return self

    @property
    def dim(self) -> int:
        return self.value.shape[0]


class MetamorphicWeights(BaseModel):
    """Lambda-parameterized noise weight Q_e and its inverse."""

    lam: float = Field(gt=0.0, lt=1.0, alias="lambda")
    M: Matrix
    Q: Matrix
    Qe_inv: Matrix
    Qe: Matrix

    model_config = ConfigDict(
        arbitrary_types_allowed=True, frozen=True, populate_by_name=True
    )

    @model_validator(mode="after")
    def check_shapes(self) -> "MetamorphicWeights":
        d = self.M.shape[0]
        if self.Qe_inv.shape != (d, d) or self.Qe.shape != (d, d):
            raise DimensionError("Q_e must match the shape of M")
        if self.Q.shape[0] > d:
            raise DimensionError("Q is larger than M")
        return self


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration-limit"

    @classmethod
    def from_string(cls, s: str) -> "QpStatus":
        try:
            return cls(s.lower())
        except ValueError:
            return cls[s.upper().replace("-", "_")]


class QpProblem(BaseModel):
    """Convex QP: minimize 1/2 z'Hz + g'z subject to A_in z <= b_in."""

    H: Matrix
    g: Vector
    A_in: Optional[Matrix] = None
    b_in: Optional[Vector] = None
    warm_start: Optional[Vector] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def default_constraints(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("A_in") is None and "g" in data:
            d = np.atleast_1d(np.asarray(data["g"], dtype=float)).size
            data = {**data, "A_in": np.zeros((0, d)), "b_in": np.zeros(0)}
        return data

    @model_validator(mode="after")
    def check_problem(self) -> "QpProblem":
        d = self.g.shape[0]
        if self.H.shape != (d, d):
            raise DimensionError(f"H must be {d}x{d}, got {self.H.shape}")
        if self.A_in.shape[1] != d or self.A_in.shape[0] != self.b_in.shape[0]:
            raise DimensionError(
                f"constraint shapes A_in {self.A_in.shape}, b_in {self.b_in.shape} "
                f"do not match dimension {d}"
            )
        if not is_symmetric(self.H, rtol=1e-10):
            raise ValueError("H must be symmetric")
        if d and min_eig(self.H) < -1e-10 * max(1.0, float(np.trace(np.abs(self.H)))):
            raise ValueError("H is not positive semidefinite; the problem is nonconvex")
        if self.warm_start is not None and self.warm_start.shape[0] != d:
            raise DimensionError("warm start has the wrong dimension")
        return self

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.b_in.shape[0]


class QpSolution(BaseModel):
    z: Vector
    duals: Vector
    status: QpStatus
    kkt_residual: float
    objective: float
    iterations: int = 0
    active_set: List[int] = Field(default_factory=list)
    certificate: Optional[Vector] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class BatchMaps(BaseModel):
    """Stacked horizon maps of the open-loop plant and the observer loop.

    Row block i of Lambda is C A^i, of Lambda_bar is C A_L^i (i = 0..N). The
    lower block-Toeplitz maps have block (i, j), i > j, equal to
    C A^(i-j-1) B (Gamma), C A^(i-j-1) (Phi_w), C A_L^(i-j-1) B (Gamma_bar),
    C A_L^(i-j-1) L (L_N) and C A_L^(i-j-1) (Phi_w_bar).
    """

    Lambda: Matrix
    Gamma: Matrix
    Phi_w: Matrix
    Lambda_bar: Matrix
    Gamma_bar: Matrix
    Phi_bar: Matrix
    L_N: Matrix
    Psi: Matrix
    Phi_w_bar: Matrix
    horizon: int = Field(ge=1)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class ErrorDynamics(BaseModel):
    """e_{t-N} = A_bar_L e_{t-N-1} + S_bar^-1 S1 w-stack + S_bar^-1 S2 v-stack."""

    A_bar_L: Matrix
    S_bar: Matrix
    S1: Matrix
    S2: Matrix
    ratio: float

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class BoundParams(BaseModel):
    a: float = Field(ge=0.0)
    b: float = Field(ge=0.0)
    b0: float = Field(ge=0.0)
    a_l: float = Field(ge=0.0)
    theta1: float = Field(ge=0.0)
    theta2: float = Field(ge=0.0)
    l: float = Field(ge=0.0)  # noqa: E741
    z_w: float = Field(ge=0.0)
    z_v: float = Field(ge=0.0)
    z_bar: float = Field(ge=0.0)
    theta_bar: float = Field(ge=0.0)
    eta: float
    n: int


class BoundResult(BaseModel):
    params: BoundParams
    zeta: List[float]
    zeta_inf: Optional[float] = None
    zeta_bar: List[float]
    zeta_bar_inf: Optional[float] = None
    condition_a: bool
    condition_a_value: float
    diverges: bool
    rho_A_bar_L: float


class MonotonicityRow(BaseModel):
    lambda_low: float
    lambda_high: float
    k: int
    min_eig_diff: float
    passed: bool = Field(serialization_alias="pass")


class MonotonicityReport(BaseModel):
    mode: str
    rows: List[MonotonicityRow]
    passed: bool


class DecayRow(BaseModel):
    lambda_low: float
    lambda_high: float
    min_eig_diff: float
    min_eig_QbarL_low: float
    min_eig_QbarL_high: float


class DecayReport(BaseModel):
    rows: List[DecayRow]
    passed: bool
    d_lambda_tilde_rel_error: float
    d_lambda_tilde_sq_rel_error: float
    derivatives_ok: bool


class LambdaAnalysisRow(BaseModel):
    """One row of the initial-state MHE analysis table."""

    lam: float = Field(serialization_alias="lambda")
    rho_AbarL: float
    a: float
    b: float
    zeta_inf: Optional[float]
    zeta_bar_inf: Optional[float]
    condition_a_satisfied: bool
    min_eig_QbarL_diff: Optional[float]
