"""
Configuration Settings Module
Centralized configuration management using Pydantic Settings
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from typing import Optional
from pathlib import Path


class Settings(BaseSettings):
    """Application configuration settings"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Application Settings
    APP_NAME: str = "DRO Confidence Intervals"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False

    # Worker pool cap for the Monte Carlo harness (None = hardware parallelism)
    DRO_CI_THREADS: Optional[int] = Field(default=None, ge=1)

    # Exact DRO solver
    INNER_TOL: float = 1e-12
    MAX_INNER_ITERATIONS: int = 100
    MAX_LM_TRIES: int = 6
    MAX_OUTER_ITERATIONS: int = 500
    DIVERGENCE_TOL: float = 1e-10
    MEAN_TOL: float = 1e-12
    MAX_HALVINGS: int = 30
    DOMAIN_MARGIN: float = 1e-9
    DEGENERATE_VARIANCE_TOL: float = 1e-12

    # Empirical likelihood profile
    EL_Q_CAP: float = 50.0
    EL_TOL: float = 1e-8

    # Optimization model minimizer
    MINIMIZER_TOL: float = 1e-11
    MINIMIZER_MAX_ITER: int = 200
    SINGULAR_HESSIAN_TOL: float = 1e-10

    # V-statistic kernel evaluation (rows per block)
    KERNEL_BLOCK_ROWS: int = 512

    # Ball size correction
    CLAMP_FLOOR_FRACTION: float = 0.1
    WHITENING_RANK_TOL: float = 1e-10

    # Coverage experiments
    DEFAULT_REPS: int = 10_000
    ORACLE_REPS: int = 5_000
    TRUTH_PAIRS: int = 1_000_000
    FAILURE_RATE_FLAG: float = 0.001

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None  # e.g. logs/dro_ci.log

    # Database Configuration
    DATABASE_URL: str = Field(default="sqlite:///./dro_ci_results.db")

    # Paths
    BASE_DIR: Path = Path(__file__).resolve().parent.parent
    SCENARIO_DIR: Path = BASE_DIR / "scenarios"


# Create settings instance
settings = Settings()
