"""
Configuration Management
Mục đích: Centralized configuration với environment variables
"""

import os
from dataclasses import dataclass, field
from typing import Optional

from dotenv import load_dotenv

from .exceptions import ConfigError

# Load environment variables
load_dotenv()


AUGMENTATION_MODES = ("tie_lines", "identity")
THRESHOLD_MODES = ("sigma", "absolute")


@dataclass
class EstimatorDefaults:
    """Default estimator parameters cho D-RBSE: lambda=1.34, rho_f=1.0, rho_s=0.1, eps=5e-4"""
    lambda_: float = 1.34
    rho_f: float = 1.0
    rho_s: float = 0.1
    epsilon: float = 5.0e-4
    max_iter: int = 500
    augmentation: str = "identity"


@dataclass
class AppConfig:
    """Main application configuration"""
    project_name: str
    environment: str
    log_level: str
    output_dir: str
    estimator: EstimatorDefaults = field(default_factory=EstimatorDefaults)


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


def load_config() -> AppConfig:
    """
    Load configuration from environment variables
    SRP: Chỉ lo việc load config
    """
    augmentation = os.getenv("DRBSE_AUGMENTATION", "identity")
    if augmentation not in AUGMENTATION_MODES:
        raise ConfigError(
            f"DRBSE_AUGMENTATION must be one of {AUGMENTATION_MODES}, got {augmentation!r}"
        )

    estimator = EstimatorDefaults(
        lambda_=_env_float("DRBSE_LAMBDA", 1.34),
        rho_f=_env_float("DRBSE_RHO_F", 1.0),
        rho_s=_env_float("DRBSE_RHO_S", 0.1),
        epsilon=_env_float("DRBSE_EPSILON", 5.0e-4),
        max_iter=_env_int("DRBSE_MAX_ITER", 500),
        augmentation=augmentation,
    )

    return AppConfig(
        project_name=os.getenv("PROJECT_NAME", "drbse"),
        environment=os.getenv("ENVIRONMENT", "development"),
        log_level=os.getenv("DRBSE_LOG_LEVEL", "INFO"),
        output_dir=os.getenv("DRBSE_OUTPUT_DIR", "results"),
        estimator=estimator,
    )


# Global config instance
_config: Optional[AppConfig] = None


def get_config() -> AppConfig:
    """
    Get global configuration instance - Singleton pattern
    """
    global _config
    if _config is None:
        _config = load_config()
    return _config


def reset_config() -> None:
    """Drop the cached instance (tests change the environment between cases)"""
    global _config
    _config = None
