import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from core.exceptions import ConfigError
from schemas.schema import ExperimentConfig
from utils.log import setup_logger

logger = setup_logger(__name__)

# Load environment variables from .env file
load_dotenv('.env', override=False)


class Settings:
    """Environment-level settings shared by every command."""
    DATA_ROOT: str = os.getenv("PSLOSS_DATA_ROOT", "./dataset")
    OUTPUT_DIR: str = os.getenv("PSLOSS_OUTPUT_DIR", "./runs")
    LOG_LEVEL: str = os.getenv("PSLOSS_LOG_LEVEL", "INFO")

    @property
    def data_root(self) -> Path:
        return Path(os.getenv("PSLOSS_DATA_ROOT", self.DATA_ROOT))

    @property
    def output_root(self) -> Path:
        return Path(os.getenv("PSLOSS_OUTPUT_DIR", self.OUTPUT_DIR))

    def resolve_dataset(self, path: str) -> Path:
        candidate = Path(path)
        if candidate.is_absolute():
            return candidate
        return self.data_root / candidate

    def resolve_output(self, config: ExperimentConfig) -> Path:
        if config.output_dir:
            return Path(config.output_dir)
        return self.output_root / config.name


settings = Settings()


def _read_document(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", {"path": str(path)})
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with path.open("rb") as fh:
                return tomllib.load(fh)
        if suffix == ".json":
            with path.open("r", encoding="utf-8") as fh:
                return json.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Config file {path} is not valid {suffix[1:].upper()}: {e}", {"path": str(path)}) from e
    raise ConfigError(f"Unsupported config format '{suffix}', use .toml or .json", {"path": str(path)})


def build_experiment_config(document: Dict[str, Any], seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Validate a raw config mapping, applying CLI overrides on top."""
    document = dict(document)
    if seed is not None:
        document["seed"] = seed
    if output_dir is not None:
        document["output_dir"] = output_dir
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        errors = [{"loc": "/".join(map(str, err["loc"])), "msg": err["msg"]} for err in e.errors()]
        logger.danger(f"Invalid experiment config: {errors}")
        raise ConfigError("Validation error", {"errors": errors}) from e


def load_experiment_config(path: str | Path, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    config = build_experiment_config(_read_document(path), seed=seed, output_dir=output_dir)
    logger.success(f"Loaded experiment config '{config.name}' from {path}")
    return config
