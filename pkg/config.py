import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Base directory = repo root
BASE_DIR = Path(__file__).resolve().parent
ENV_PATH = BASE_DIR / ".env"

# Load .env
load_dotenv(ENV_PATH)

CONFIG_DIR = BASE_DIR / "config"
DATA_DIR = BASE_DIR / "data"

# === RUNTIME DEFAULTS ===
THREADS = max(1, int(os.getenv("MAXCOMBO_THREADS", "1")))
OUTPUT_DIR = Path(os.getenv("MAXCOMBO_OUTPUT_DIR", str(BASE_DIR / "out")))
LOG_LEVEL = os.getenv("MAXCOMBO_LOG_LEVEL", "INFO").upper()

DEFAULT_DESIGN_CONFIG = CONFIG_DIR / "design_default.json"

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: str | None = None) -> None:
    """Install the root handler with the bracketed level tags used across the engine."""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL), logging.INFO),
        format=LOG_FORMAT,
    )