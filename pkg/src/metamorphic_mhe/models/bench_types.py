from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from metamorphic_mhe.models.system_types import Matrix


class TrajectoryLog(BaseModel):
    """Simulated trajectory with the estimates produced on it.

    Row k of ``states`` is x_k and row k of ``outputs`` is y_k = C x_k + v_k;
    estimate rows hold NaN where an estimator had no output.
    """

    seed: int
    states: Matrix
    outputs: Matrix
    process_noise: Matrix
    measurement_noise: Matrix
    inputs: Optional[Matrix] = None
    estimates: Dict[str, Matrix] = Field(default_factory=dict)
    failed: List[str] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def error_norms(self, label: str) -> np.ndarray:
        return np.linalg.norm(self.states - self.estimates[label], axis=1)


class ArmseEntry(BaseModel):
    estimator: str
    lam: Optional[float] = Field(default=None, serialization_alias="lambda")
    armse: float
    rmse: List[float]
    failures: int = 0


class ArmseReport(BaseModel):
    """ARMSE per estimator: the mean over scenarios of each scenario's RMSE."""

    entries: List[ArmseEntry]
    seeds: List[int]
    spec_hash: str
    framework: str

    def entry(self, estimator: str) -> ArmseEntry:
        for e in self.entries:
            if e.estimator == estimator:
                return e
        raise KeyError(estimator)

    @property
    def failures(self) -> int:
        return sum(e.failures for e in self.entries)


class SweepRow(BaseModel):
    estimator: str
    lam: Optional[float] = Field(default=None, serialization_alias="lambda")
    armse: float
    scenarios: int
    failures: int


class SweepTable(BaseModel):
    rows: List[SweepRow]
    monotone_decreasing: bool
    fir_bracketed: Optional[bool] = None
    spec_hash: str


class ComparisonRow(BaseModel):
    estimator: str
    armse: float
    ratio_to_fir: Optional[float]
