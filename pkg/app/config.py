"""
Application configuration settings.
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from AFFDIM_* environment variables or .env."""

    # Worker budget (0 = one worker per CPU); fallback for --threads
    THREADS: int = 0
    LOG_LEVEL: str = "INFO"

    # Estimator defaults
    PAIR_BUDGET: int = 50_000_000
    DEFAULT_SEED: int = 0

    # Selftest tolerances
    SELFTEST_SPECTRUM_TOL: float = 1e-2
    SELFTEST_CARPET_TOL: float = 1e-9
    SELFTEST_AFFINITY_TOL: float = 1e-9
    SELFTEST_LYAPDIM_TOL: float = 1e-9
    SELFTEST_CANTOR_TOL: float = 0.05

    model_config = SettingsConfigDict(env_prefix="AFFDIM_", env_file=".env", case_sensitive=True, extra="ignore")


def get_settings() -> Settings:
    """Fresh settings, re-reading the environment."""
    return Settings()


# Global settings instance
settings = Settings()
