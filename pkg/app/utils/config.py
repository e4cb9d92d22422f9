"""
Configuration management for the application
Process settings come from the environment; run settings from a JSON document
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import ValidationError

# Load environment variables from .env file if it exists
try:
    from dotenv import load_dotenv
    env_path = Path(__file__).parent.parent.parent / '.env'
    if env_path.exists():
        load_dotenv(env_path)
except ImportError:
    # python-dotenv not installed, skip
    pass

from app.models.schemas import RunConfig
from app.utils.exceptions import ConfigurationError, FormatError, UsageError

logger = logging.getLogger(__name__)


class Config:
    """Process configuration"""

    LOG_LEVEL: str = os.getenv("PB_LOG_LEVEL", "INFO")
    DEBUG: bool = os.getenv("PB_DEBUG", "False").lower() == "true"
    OUTPUT_DIR: str = os.getenv("PB_OUTPUT_DIR", "runs")
    WORKERS: int = int(os.getenv("PB_WORKERS", "1"))


# Global config instance
config = Config()


def set_dotted(target: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Set ``a.b.c`` inside a nested dict, creating intermediate levels"""
    parts = dotted_key.split(".")
    node = target
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional JSON file and flag overrides

    Precedence: overrides > file > model defaults. Overrides whose value is
    None are treated as "flag not given".
    """
    document: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise UsageError(f"config file not found: {config_path}")
        try:
            document = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"config file {config_path} is not valid JSON: {e}") from e
        if not isinstance(document, dict):
            raise FormatError(f"config file {config_path} must hold a JSON object")
        logger.debug(f"Loaded run config from {config_path}")

    # environment settings sit between model defaults and the file
    document.setdefault("output_dir", config.OUTPUT_DIR)
    sweep = document.setdefault("sweep", {})
    if isinstance(sweep, dict):
        sweep.setdefault("workers", config.WORKERS)

    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(document, key, value)

    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigurationError(f"invalid run config: {e}") from e
