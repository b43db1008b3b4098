import json
import os
from typing import Annotated, Any, Optional

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

from metamorphic_mhe.errors import ConfigError, DimensionError, NotSchurError
from metamorphic_mhe.utils.linalg import is_symmetric, min_eig, spectral_radius


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _as_matrix(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got an array of shape {arr.shape}")
    return _frozen(arr)


def _as_vector(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim > 1 and arr.size != max(arr.shape):
        raise ValueError(f"expected a vector, got an array of shape {arr.shape}")
    return _frozen(np.atleast_1d(arr).ravel())


# Matrices are stored as read-only float arrays and serialized as nested lists.
Matrix = Annotated[
    np.ndarray,
    BeforeValidator(_as_matrix),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]
Vector = Annotated[
    np.ndarray,
    BeforeValidator(_as_vector),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


class LinearPlant(BaseModel):
    """Discrete LTI plant x+ = A x + B u + G w, y = C x + v."""

    A: Matrix
    G: Matrix
    C: Matrix
    B: Optional[Matrix] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def default_noise_channel(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("G") is None and "A" in data:
            n = np.atleast_2d(np.asarray(data["A"], dtype=float)).shape[0]
            data = {**data, "G": np.eye(n)}
        return data

    @model_validator(mode="after")
    def check_dimensions(self) -> "LinearPlant":
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.G.shape[0] != n:
            raise DimensionError(f"G must have {n} rows, got {self.G.shape}")
        if self.C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {self.C.shape}")
        if self.B is not None and self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return 0 if self.B is None else self.B.shape[1]

    @property
    def input_matrix(self) -> np.ndarray:
        """B, or an n x 0 matrix when the plant has no control channel."""
        return np.zeros((self.n, 0)) if self.B is None else self.B


class NoiseWeights(BaseModel):
    Q: Matrix
    R: Matrix

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("Q", "R")
    @classmethod
    def check_spd(cls, v: np.ndarray) -> np.ndarray:
        if not is_symmetric(v):
            raise ValueError("weight matrix must be symmetric")
        if min_eig(v) <= 0.0:
            raise ValueError("weight matrix must be positive definite")
        return v


class ObserverGain(BaseModel):
    """Luenberger gain L together with its Schur-stable loop matrix A - LC."""

    L: Matrix
    A_L: Matrix
    spectral_radius: float = Field(default=0.0)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def fill_radius(cls, data: Any) -> Any:
        if isinstance(data, dict) and "A_L" in data:
            data = {**data, "spectral_radius": spectral_radius(data["A_L"])}
        return data

    @model_validator(mode="after")
    def check_schur(self) -> "ObserverGain":
        if self.A_L.shape[0] != self.A_L.shape[1] or self.L.shape[0] != self.A_L.shape[0]:
            raise DimensionError(
                f"inconsistent observer shapes L {self.L.shape}, A_L {self.A_L.shape}"
            )
        if self.spectral_radius >= 1.0:
            raise NotSchurError(
                f"A - LC is not Schur stable (spectral radius {self.spectral_radius:.6f})",
                self.spectral_radius,
            )
        return self


class AugmentedPlant(BaseModel):
    """Observer-augmented model with state [observer estimate; observer error]."""

    A_e: Matrix
    G_e: Matrix
    C_e: Matrix
    n: int

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_blocks(self) -> "AugmentedPlant":
        n2 = 2 * self.n
        if self.A_e.shape != (n2, n2):
            raise DimensionError(f"A_e must be {n2}x{n2}, got {self.A_e.shape}")
        if self.G_e.shape[0] != n2 or self.C_e.shape[1] != n2:
            raise DimensionError("G_e rows and C_e columns must equal 2n")
        if np.any(self.A_e[self.n :, : self.n] != 0.0):
            raise DimensionError("lower-left block of A_e must be zero")
        return self

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def noise_dim(self) -> int:
        return self.G_e.shape[1]

    @property
    def p(self) -> int:
        return self.C_e.shape[0]

    def plant_state(self, x_e: np.ndarray) -> np.ndarray:
        """Plant state x = observer estimate + observer error."""
        x_e = np.asarray(x_e)
        return x_e[..., : self.n] + x_e[..., self.n :]


class Box(BaseModel):
    """Axis-aligned interval set [lower, upper]; bounds may be infinite."""

    lower: Vector
    upper: Vector

    model_config = ConfigDict(
        arbitrary_types_allowed=True, frozen=True, ser_json_inf_nan="constants"
    )

    @model_validator(mode="after")
    def check_bounds(self) -> "Box":
        if self.lower.shape != self.upper.shape:
            raise DimensionError(
                f"bounds differ in dimension: {self.lower.shape} vs {self.upper.shape}"
            )
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("box bounds must not be NaN")
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")
        return self

    @classmethod
    def symmetric(cls, half_widths: Any) -> "Box":
        h = np.atleast_1d(np.asarray(half_widths, dtype=float))
        return cls(lower=-h, upper=h)

    @classmethod
    def zero(cls, dim: int) -> "Box":
        return cls(lower=np.zeros(dim), upper=np.zeros(dim))

    @classmethod
    def unbounded(cls, dim: int) -> "Box":
        return cls(lower=np.full(dim, -np.inf), upper=np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def is_c_set(self) -> bool:
        """Compact and containing the origin in its interior."""
        return self.is_bounded and bool(np.all(self.lower < 0.0) and np.all(self.upper > 0.0))

    def contains_point(self, x: Any, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(
            np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol)
        )

    def hausdorff(self, other: "Box") -> float:
        """Hausdorff distance in the max norm."""
        return float(
            max(
                np.max(np.abs(self.lower - other.lower), initial=0.0),
                np.max(np.abs(self.upper - other.upper), initial=0.0),
            )
        )

    def scaled(self, factor: float) -> "Box":
        return Box(lower=factor * self.lower, upper=factor * self.upper)

    def product(self, other: "Box") -> "Box":
        """Cartesian product self x other."""
        return Box(
            lower=np.concatenate([self.lower, other.lower]),
            upper=np.concatenate([self.upper, other.upper]),
        )


class ModelDocument(BaseModel):
    """JSON model document with row-major matrices A, G, B, C, Q, R, L."""

    A: Matrix
    C: Matrix
    G: Optional[Matrix] = None
    B: Optional[Matrix] = None
    Q: Optional[Matrix] = None
    R: Optional[Matrix] = None
    L: Optional[Matrix] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def from_file(cls, file_path: str) -> "ModelDocument":
        """Load a model document from a JSON file."""
        if not os.path.exists(file_path):
            raise ConfigError(f"model document not found: {file_path}")

        with open(file_path, "r") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"model document {file_path} is not valid JSON: {e}") from e

        return cls.model_validate(data)

    def to_plant(self) -> LinearPlant:
        return LinearPlant(A=self.A, G=self.G, C=self.C, B=self.B)

    def to_weights(self) -> NoiseWeights:
        plant = self.to_plant()
        Q = self.Q if self.Q is not None else np.eye(plant.m)
        R = self.R if self.R is not None else np.eye(plant.p)
        return NoiseWeights(Q=Q, R=R)
