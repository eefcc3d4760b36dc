"""Configuration from .env file."""

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    DATA_DIR: str = "data"

    # Empirical Bayes / EM
    KERNEL_LENGTH: int = 100  # GP truncation length l
    EM_TOLERANCE: float = 1e-2  # relative eta change
    EM_MAX_ITERATIONS: int = 50
    EM_NORM: str = "euclidean"  # euclidean | inf
    BETA_MIN: float = 1e-4
    BETA_MAX: float = 1.0 - 1e-6
    BETA_GRID_POINTS: int = 50
    INIT_ARX_ORDER: int = 20  # ARX order of the default EM start
    INIT_SWEEPS: int = 2  # hyperparameter grid sweeps before the EM

    # Polynomials / network
    UNIT_CIRCLE_TOL: float = 1e-8
    WARMUP_SAMPLES: int = 500
    STABILITY_GRID: int = 512

    # Baseline PEM
    PEM_MULTISTART: int = 5
    PEM_MAX_ITERATIONS: int = 100
    PEM_GRADIENT_TOL: float = 1e-6

    # Monte Carlo
    FIT_TAPS: int = 100
    MC_WORKERS: int = 1

    class Config:
        env_file = ".env"


settings = Settings()
