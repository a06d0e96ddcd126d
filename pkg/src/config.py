"""
Configuration and logging setup.

Values come from the environment (optionally a .env file). Command-line flags
override everything read here.
"""

import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables from .env file
load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# =============================================================================
# Configuration
# =============================================================================


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE", "")

# Master seed for every randomized step (splits, SMO sweep order, synthesis)
DEFAULT_SEED = _env_int("SEMG_SEED", 7)

# Worker processes for trial extraction and subset search
DEFAULT_JOBS = _env_int("SEMG_JOBS", 1)

DEFAULT_OUT_DIR = Path(os.getenv("SEMG_OUT_DIR", "out"))

PRESETS_DIR = Path(
    os.getenv("SEMG_PRESETS_DIR", str(Path(__file__).resolve().parent / "presets"))
)

SCHEMA_VERSION = "1.0.0"


def configure_logging(level: str | None = None, log_file: str | os.PathLike | None = None):
    """
    Configure root logging with a console handler and an optional file handler.

    Console output goes to stderr so stdout only carries command summaries.
    """
    level = (level or LOG_LEVEL).upper()
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]

    log_path = log_file or LOG_FILE
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)

    try:
        logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    except ValueError:
        raise ConfigError(f"unknown log level: {level}") from None
