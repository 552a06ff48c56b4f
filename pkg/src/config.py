from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union
from math import comb

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from src.utils.errors import ConfigurationError

# Load environment variables from .env file
load_dotenv()

# Sections of the experiment TOML file; keys inside them are flattened
CONFIG_SECTIONS = ("problem", "discretization", "solver", "output")


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    env: str = "development"
    LOG_LEVEL: str = "INFO"

    # Dense tensors above this many entries are refused
    FULL_TENSOR_CAP: int = 10**6
    # The dense oracle refuses all-at-once systems with more unknowns than this
    ORACLE_DOF_CAP: int = 10**5

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    @field_validator("env", mode="before")
    @classmethod
    def parse_environment(cls, v):
        if isinstance(v, str):
            return v.lower()
        return v


@lru_cache()
def get_settings() -> Settings:
    return Settings()


class PicardConfig(BaseModel):
    """Stopping and truncation tolerances of the inexact low-rank Picard solve."""

    tol_picard: float = 1e-5
    tol_gmres: float = 1e-1
    eps_gmres: Optional[float] = None
    eps_soln: float = 1e-7
    eps_conv: float = 1e-3
    tol_inner: float = 1e-1
    maxit_picard: int = Field(default=20, ge=1)
    maxit_gmres: int = Field(default=100, ge=1)
    maxit_inner: int = Field(default=100, ge=1)
    preconditioner: Literal["pcd", "lsc"] = "lsc"

    @field_validator("tol_picard", "tol_gmres", "eps_gmres", "eps_soln", "eps_conv", "tol_inner")
    @classmethod
    def check_unit_interval(cls, v, info):
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError(f"{info.field_name} must lie in (0, 1), got {v}")
        return v

    @model_validator(mode="after")
    def default_eps_gmres(self):
        if self.eps_gmres is None:
            self.eps_gmres = 1e-2 * self.tol_gmres
        if self.eps_gmres >= self.tol_gmres:
            raise ValueError(
                f"eps_gmres ({self.eps_gmres}) must be smaller than tol_gmres ({self.tol_gmres})"
            )
        return self


class ExperimentConfig(BaseSettings):
    """One benchmark run; defaults reproduce the reference parameter table."""

    # [problem]
    nu0: float = Field(default=1.0 / 50.0, gt=0.0)
    sigma: float = Field(default=0.01, ge=0.0)
    b: float = Field(default=4.0, gt=0.0, description="correlation length of the covariance")
    m: int = Field(default=3, ge=0)
    d_psi: int = Field(default=3, ge=0)
    t_f: float = Field(default=1.0, gt=0.0)
    domain: Literal["step", "channel"] = "step"

    # [discretization]
    tau: float = Field(default=2.0**-6, gt=0.0)
    h: float = Field(default=2.0**-2, gt=0.0)

    # [solver]
    preconditioner: Literal["pcd", "lsc"] = "lsc"
    tol_picard: float = 1e-5
    tol_gmres: float = 1e-1
    eps_gmres: Optional[float] = None
    eps_soln: float = 1e-7
    eps_conv: float = 1e-3
    tol_inner: float = 1e-1
    maxit_picard: int = 20
    maxit_gmres: int = 100
    maxit_inner: int = 100

    # [output]
    output_dir: str = "results"
    output_times: List[float] = Field(default_factory=list)
    seed: int = 0
    n_mc_samples: int = Field(default=1000, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="STOCHNS_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    @model_validator(mode="after")
    def check_time_grid(self):
        steps = self.t_f / self.tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 1:
            raise ValueError(f"tau={self.tau} does not divide t_f={self.t_f} into whole steps")
        for t in self.output_times:
            if not 0.0 < t <= self.t_f + 1e-12:
                raise ValueError(f"output time {t} outside (0, t_f]")
        # Validate tolerances early so an invalid file fails before any assembly
        self.picard_config()
        return self

    @property
    def n_t(self) -> int:
        return int(round(self.t_f / self.tau))

    @property
    def n_xi(self) -> int:
        return comb(self.m + self.d_psi, self.m)

    def picard_config(self) -> PicardConfig:
        return PicardConfig(
            tol_picard=self.tol_picard,
            tol_gmres=self.tol_gmres,
            eps_gmres=self.eps_gmres,
            eps_soln=self.eps_soln,
            eps_conv=self.eps_conv,
            tol_inner=self.tol_inner,
            maxit_picard=self.maxit_picard,
            maxit_gmres=self.maxit_gmres,
            maxit_inner=self.maxit_inner,
            preconditioner=self.preconditioner,
        )

    def with_overrides(self, **updates: Any) -> "ExperimentConfig":
        """Return a validated copy with some keys replaced."""
        data = self.model_dump()
        data.update(updates)
        return ExperimentConfig(**data)


def flatten_sections(data: Dict[str, Any]) -> Dict[str, Any]:
    """Flatten `[section]` tables of a config file into one key space."""
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        if key in CONFIG_SECTIONS and isinstance(value, dict):
            for inner_key, inner_value in value.items():
                if inner_key in flat:
                    raise ConfigurationError(f"Key '{inner_key}' defined in more than one section")
                flat[inner_key] = inner_value
        elif isinstance(value, dict):
            raise ConfigurationError(f"Unknown config section: [{key}]")
        else:
            flat[key] = value
    return flat


def load_experiment_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """Build an ExperimentConfig from a TOML file plus command-line overrides.

    Args:
        path: Optional TOML file with [problem], [discretization], [solver], [output] sections
        overrides: Values taking precedence over the file (None entries are skipped)

    Returns:
        Validated experiment configuration
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        values = flatten_sections(TomlConfigSettingsSource(ExperimentConfig, toml_file=path).toml_data)
        unknown = sorted(set(values) - set(ExperimentConfig.model_fields))
        if unknown:
            raise ConfigurationError(f"Unknown config keys: {', '.join(unknown)}")

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    return ExperimentConfig(**values)
