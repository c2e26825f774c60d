import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator


class NumericDefaults(BaseModel):
    """Numerical constants shared by the inference modules"""

    model_config = ConfigDict(frozen=True)

    alpha: float = 0.05
    inversion_tolerance: float = 1e-4        # outcome units
    search_range_factor: float = 1e3         # x outcome range before reporting an infinite endpoint
    exact_enumeration_cap: int = 10_000_000  # prod_i C(n_i, m_i)
    min_mc_draws: int = 1000
    default_mc_draws: int = 10_000
    cost_scale: float = 1e6                  # distance -> integer flow cost
    covariance_ridge: float = 1e-8           # x trace / k
    tie_tolerance: float = 1e-9              # relative, for T >= t_obs


class Settings(BaseModel):
    """Runtime settings read from the environment (and an optional .env file)"""

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: str = "WARNING"
    log_file: Optional[str] = None
    numeric: NumericDefaults = Field(default_factory=NumericDefaults)

    @field_validator('log_level')
    @classmethod
    def _upper_level(cls, value: str) -> str:
        level = value.strip().upper()
        if level not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {value}")
        return level

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        values = {}
        if os.environ.get('VE_THREADS'):
            values['threads'] = int(os.environ['VE_THREADS'])
        if os.environ.get('VE_LOG_LEVEL'):
            values['log_level'] = os.environ['VE_LOG_LEVEL']
        if os.environ.get('VE_LOG_FILE'):
            values['log_file'] = os.environ['VE_LOG_FILE']
        return cls(**values)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Settings singleton; call ``get_settings.cache_clear()`` after changing the environment."""
    return Settings.from_env()


NUMERIC = NumericDefaults()
