"""
Bucket Brigade - Settings
=========================
Reads run configuration from the environment (and a local .env file).

Variables:
    BRIGADE_DENOM_CAP_BITS      denominator guard for exact runs
    BRIGADE_SCOUT_PRECISION     mantissa bits used while scouting orbits
    BRIGADE_SCOUT_EPSILON_BITS  cell-boundary tolerance is 2**-bits
    BRIGADE_SCOUT_BUDGET        default scouting step budget
    BRIGADE_WORKERS             processes used by the period search
    BRIGADE_LOG_LEVEL           logging level for the CLI
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

from errors import ConfigError

# ============================================================================
# CONFIGURATION
# ============================================================================

DEFAULT_DENOM_CAP_BITS = 1_000_000
DEFAULT_SCOUT_PRECISION = 128
DEFAULT_SCOUT_EPSILON_BITS = 64
DEFAULT_SCOUT_BUDGET = 1_000_000
DEFAULT_WORKERS = 1
DEFAULT_LOG_LEVEL = "WARNING"

MIN_SCOUT_PRECISION = 128


@dataclass(frozen=True)
class Settings:
    denom_cap_bits: int = DEFAULT_DENOM_CAP_BITS
    scout_precision: int = DEFAULT_SCOUT_PRECISION
    scout_epsilon_bits: int = DEFAULT_SCOUT_EPSILON_BITS
    scout_budget: int = DEFAULT_SCOUT_BUDGET
    workers: int = DEFAULT_WORKERS
    log_level: str = DEFAULT_LOG_LEVEL


def _int_env(name, default, minimum=1):
    raw = os.getenv(name, "")
    if not raw.strip():
        return default
    try:
        value = int(raw.replace("_", "").replace(",", ""))
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def load_settings(dotenv=True):
    """Build Settings from the environment, loading .env first if present"""
    if dotenv:
        load_dotenv(override=False)

    level = os.getenv("BRIGADE_LOG_LEVEL", DEFAULT_LOG_LEVEL).strip().upper() or DEFAULT_LOG_LEVEL
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"BRIGADE_LOG_LEVEL has unknown level {level!r}")

    return Settings(
        denom_cap_bits=_int_env("BRIGADE_DENOM_CAP_BITS", DEFAULT_DENOM_CAP_BITS),
        scout_precision=_int_env("BRIGADE_SCOUT_PRECISION", DEFAULT_SCOUT_PRECISION,
                                 minimum=MIN_SCOUT_PRECISION),
        scout_epsilon_bits=_int_env("BRIGADE_SCOUT_EPSILON_BITS", DEFAULT_SCOUT_EPSILON_BITS),
        scout_budget=_int_env("BRIGADE_SCOUT_BUDGET", DEFAULT_SCOUT_BUDGET),
        workers=_int_env("BRIGADE_WORKERS", DEFAULT_WORKERS),
        log_level=level,
    )
