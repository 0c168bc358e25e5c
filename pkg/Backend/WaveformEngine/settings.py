# Backend/WaveformEngine/settings.py

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv


PACKAGE_DIR = Path(__file__).resolve().parent
PROJECT_DIR = PACKAGE_DIR.parent.parent

DEFAULT_ORACLE_CONFIG = PACKAGE_DIR / "oracle_defaults.cfg"

# Load .env from project root (WavePilot/.env)
load_dotenv(PROJECT_DIR / ".env")


@dataclass(frozen=True)
class Settings:
    log_level: str
    out_dir: Path
    kg_path: Optional[Path]
    checkpoint_dir: Optional[Path]
    oracle_config: Path


def _optional_path(name: str) -> Optional[Path]:
    value = os.getenv(name)
    return Path(value) if value else None


def get_settings() -> Settings:
    """
    Read settings from the environment (after .env has been loaded).

    Called on demand rather than cached so tests can monkeypatch variables.
    """
    return Settings(
        log_level=os.getenv("WAVEPILOT_LOG_LEVEL", "INFO").upper(),
        out_dir=Path(os.getenv("WAVEPILOT_OUT_DIR", "out")),
        kg_path=_optional_path("WAVEPILOT_KG_PATH"),
        checkpoint_dir=_optional_path("WAVEPILOT_CHECKPOINT_DIR"),
        oracle_config=_optional_path("WAVEPILOT_ORACLE_CONFIG") or DEFAULT_ORACLE_CONFIG,
    )


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """Set up root logging once for an entry point and return the app logger."""
    logging.basicConfig(
        level=(level or get_settings().log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return logging.getLogger("wavepilot")
