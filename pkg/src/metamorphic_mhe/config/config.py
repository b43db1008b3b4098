import json
import os
from enum import Enum
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from metamorphic_mhe.errors import ConfigError


def load_json_document(file_path: str) -> dict:
    if not os.path.exists(file_path):
        raise ConfigError(f"document not found: {file_path}")

    with open(file_path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{file_path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path} must hold a JSON object")
    return data


class Framework(str, Enum):
    SECTION2 = "section2"
    SECTION3 = "section3"
    FIR = "fir"

    @classmethod
    def from_string(cls, s: str) -> "Framework":
        try:
            return cls(s.lower())
        except ValueError:
            return cls[s.upper()]


class ExperimentConfig(BaseModel):
    """Experiment protocol: model, estimator, noise, and Monte Carlo settings."""

    model: str = "vehicle"  # built-in "vehicle" or a path to a JSON model document
    framework: Framework = Framework.SECTION3
    lambdas: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75])
    mu: float = Field(default=0.15, ge=0.0)
    mu_bar: float = Field(default=0.1, ge=0.0)
    horizon: int = Field(default=20, ge=1)
    m_scale: float = Field(default=10.0, gt=0.0)
    q_scale: float = Field(default=1.0, gt=0.0)
    r_scale: float = Field(default=0.5, gt=0.0)
    w_half_width: float = Field(default=0.01, ge=0.0)
    v_half_width: float = Field(default=0.01, ge=0.0)
    t_sim: int = Field(default=120, ge=1)
    scenarios: int = Field(default=200, ge=1)
    base_seed: int = Field(default=0, ge=0)
    eval_start: int = Field(default=20, ge=0)
    eval_length: int = Field(default=100, ge=1)
    arrival: Literal["steady", "fixed"] = "steady"
    phi0_scale: float = Field(default=10.0, gt=0.0)
    gain: Literal["published", "placed"] = "published"
    include_fir: bool = True
    state_box_half_width: float = Field(default=1e4, gt=0.0)

    @field_validator("lambdas")
    @classmethod
    def check_lambdas(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one lambda is required")
        if any(lam < 0.0 or lam > 1.0 for lam in v):
            raise ValueError("lambda values must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def check_protocol(self) -> "ExperimentConfig":
        if self.eval_start + self.eval_length > self.t_sim:
            raise ValueError(
                f"evaluation window {self.eval_start}..{self.eval_start + self.eval_length - 1} "
                f"exceeds the simulation length {self.t_sim}"
            )
        if self.eval_start < self.horizon:
            raise ValueError("evaluation cannot start before the first full window")
        if self.framework == Framework.SECTION2 and any(lam >= 1.0 for lam in self.lambdas):
            raise ValueError("lambda = 1 is not admissible for the augmented-state estimator")
        return self

    @classmethod
    def from_json_file(cls, file_path: str) -> "ExperimentConfig":
        """Load an experiment from a JSON document."""
        return cls.model_validate(load_json_document(file_path))


class McpConfig(BaseSettings):
    """Configuration for the MCP server."""

    transports: List[Literal["stdio", "sse", "streamable-http"]] = Field(
        default_factory=list
    )
    address: Optional[str] = "localhost"
    port: Optional[int | str] = "18889"
    debug: Optional[bool] = False
    model_config = SettingsConfigDict(env_prefix="MMHE_MCP_", extra="ignore")


class Config(BaseSettings):
    """Configuration for metamorphic MHE runs and the analysis server."""

    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    mcp: Optional[McpConfig] = McpConfig(transports=["stdio"])
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    model_config = SettingsConfigDict(
        env_prefix="MMHE_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
    )

    @classmethod
    def from_file(cls, file_path: str) -> "Config":
        """Load configuration from a YAML file."""
        if not os.path.exists(file_path):
            return Config()

        with open(file_path, "r") as f:
            config_data = yaml.safe_load(f)

        return cls.model_validate(config_data or {})

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return env_settings, dotenv_settings, init_settings, file_secret_settings
