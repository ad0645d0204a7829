"""Process-wide defaults read from the environment (optionally a .env file)."""

import logging
import os
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

LOG_LEVEL = os.getenv("FLUID_AGENTS_LOG_LEVEL", "INFO")
RUNS_DIR = Path(os.getenv("FLUID_AGENTS_RUNS_DIR", "runs"))
DEVICE = os.getenv("FLUID_AGENTS_DEVICE", "cpu")

REPO_ROOT = Path(__file__).resolve().parents[2]
MAPS_DIR = REPO_ROOT / "maps"
GAMES_DIR = REPO_ROOT / "games"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = None) -> None:
    """Configure the root logger once; later calls only adjust the level."""
    level = (level or LOG_LEVEL).upper()
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    root.setLevel(level)
