"""
Configuration management for the thermal fixed-point toolkit.
Uses pydantic-settings for settings validation and python-dotenv for environment variable loading.
"""
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
env_path = Path(__file__).parent.parent.parent / '.env'
load_dotenv(env_path)

DATA_DIR = Path(__file__).parent.parent / "data"


class Settings(BaseSettings):
    """Application settings."""
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Logging
    LOG_LEVEL: str = "INFO"

    # OpenTelemetry settings
    OTEL_SERVICE_NAME: str = "thermofix"
    OTEL_ENABLED: bool = False
    OTEL_EXPORTER_OTLP_ENDPOINT: Optional[str] = None
    OTEL_EXPORTER_OTLP_HEADERS: Optional[str] = None

    # Bundled platform model
    DEFAULT_MODEL_PATH: Path = DATA_DIR / "default_soc.json"

    # Newton solver
    NEWTON_TOL: float = 1e-6
    NEWTON_MAX_ITER: int = 50

    # Convergence sweep
    SWEEP_DENSITY: int = 9
    SWEEP_WORKERS: int = 1

    # Envelope and first-order fit
    ENVELOPE_WINDOW: int = 10
    FIT_WINDOW_S: float = 200.0
    ARRIVAL_DELTA_K: float = 1.0

    @field_validator("NEWTON_TOL", "FIT_WINDOW_S", "ARRIVAL_DELTA_K")
    @classmethod
    def validate_positive_float(cls, v: float, info) -> float:
        """Tolerances and windows must be strictly positive."""
        if v <= 0:
            raise ValueError(f"{info.field_name} must be > 0, got {v}")
        return v

    @field_validator("NEWTON_MAX_ITER", "SWEEP_WORKERS", "ENVELOPE_WINDOW")
    @classmethod
    def validate_positive_int(cls, v: int, info) -> int:
        if v < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {v}")
        return v

    @field_validator("SWEEP_DENSITY")
    @classmethod
    def validate_density(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"SWEEP_DENSITY must be >= 2, got {v}")
        return v


@lru_cache()
def get_settings() -> Settings:
    """
    Get application settings.
    Uses lru_cache to cache the settings and avoid reading the .env file multiple times.

    Returns:
        Settings: Application settings instance
    """
    return Settings()


# Create a global settings instance
settings = get_settings()
