"""
Solver defaults from config/solver_defaults.yaml with environment overrides.
"""

import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

import yaml
from dotenv import load_dotenv

from workflow.core.access import AccessOptions
from workflow.core.continuum import ContinuumOptions
from workflow.core.iron import IroningOptions

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG = PROJECT_ROOT / "config" / "solver_defaults.yaml"

load_dotenv()


@lru_cache(maxsize=None)
def load_settings() -> Dict[str, Any]:
    """Read the defaults file once; IRONKIT_CONFIG selects another file"""
    path = Path(os.getenv("IRONKIT_CONFIG", str(DEFAULT_CONFIG)))
    with open(path, "r") as f:
        settings = yaml.safe_load(f) or {}
    logger.debug(f"Loaded solver defaults from {path}")
    return settings


def section(name: str) -> Dict[str, Any]:
    return dict(load_settings().get(name, {}))


def _build(model, name: str, overrides: Dict[str, Any]):
    values = {k: v for k, v in section(name).items() if k in model.model_fields}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return model(**values)


def iron_options(**overrides) -> IroningOptions:
    return _build(IroningOptions, "iron", overrides)


def access_options(**overrides) -> AccessOptions:
    return _build(AccessOptions, "access", overrides)


def continuum_options(**overrides) -> ContinuumOptions:
    return _build(ContinuumOptions, "continuum", overrides)


def fixtures_dir() -> Path:
    configured = os.getenv("IRONKIT_FIXTURES_DIR") or section("cli").get("fixtures_dir", "fixtures")
    path = Path(configured)
    return path if path.is_absolute() else PROJECT_ROOT / path


def log_dir() -> Path:
    return Path(os.getenv("IRONKIT_LOG_DIR") or section("cli").get("log_dir", "logs"))
