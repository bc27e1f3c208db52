import os
import logging
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"{name}={raw!r} is not an integer, using {default}")
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning(f"{name}={raw!r} is not a number, using {default}")
        return default


# Worker pool size for entry / grid evaluations
THREADS = _env_int('WISHART_HGM_THREADS', os.cpu_count() or 1)
if THREADS < 1:
    logger.warning(f"WISHART_HGM_THREADS={THREADS} is not positive, using 1")
    THREADS = 1

LOG_LEVEL = os.getenv('WISHART_HGM_LOG_LEVEL', 'INFO').upper()

# Series truncation
SERIES_EPS = _env_float('WISHART_HGM_SERIES_EPS', 1e-10)
MAX_TERMS = _env_int('WISHART_HGM_MAX_TERMS', 10_000)
STALL_WINDOW = 20

# HGM settings
LAMBDA0 = _env_float('WISHART_HGM_LAMBDA0', 1e-5)
RK_STEP = _env_float('WISHART_HGM_RK_STEP', 1e-4)
HGM_X0 = 1e-2
ENHANCED_IC_FRACTION = 0.9

# Extended range arithmetic
LOG10_CROSSOVER = 280.0
PRECISION_BITS = _env_int('WISHART_HGM_PRECISION_BITS', 106)
MP_DPS = 30

# Error estimate / Monte-Carlo
ERROR_TRIALS = 32
SEED = _env_int('WISHART_HGM_SEED', 20180101)
MC_BATCH = 20_000
