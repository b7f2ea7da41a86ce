#!/usr/bin/env python3
"""
Experiment settings loader.

A configuration argument is either a path to a ``settings.py`` module /
``.json`` file or the name of a folder under ``experiments/`` holding a
``settings.py``. Settings modules declare UPPERCASE constants whose lower-case
names are the configuration keys.
"""

import importlib.util
import json
import re
from pathlib import Path
from types import ModuleType
from typing import Any, Dict, List, Optional

from .config import RunConfig, apply_cli_overrides, apply_env_overrides
from .errors import ConfigError
from .performance_logger import log_debug

EXPERIMENT_NAME_PATTERN = re.compile(r'^[a-z0-9][a-z0-9_-]{0,63}$')


def get_project_root() -> Path:
    """Project root directory (cross-platform)"""
    return Path(__file__).parent.parent.resolve()


def abs_path(*parts) -> Path:
    """Absolute path below the project root"""
    return (get_project_root() / Path(*parts)).resolve()


def validate_experiment_name(name: str) -> bool:
    """Lower-case letters, digits, '-' and '_' only; no path components."""
    return bool(name) and EXPERIMENT_NAME_PATTERN.match(name) is not None


def load_settings_module(path: Path) -> ModuleType:
    module_name = "experiment_settings_" + re.sub(r'\W', '_', str(path.parent.name or path.stem))
    spec = importlib.util.spec_from_file_location(module_name, str(path))
    if spec is None or spec.loader is None:
        raise ConfigError([f"cannot import settings module {path}"], str(path))
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as e:
        raise ConfigError([f"settings module raised {type(e).__name__}: {e}"], str(path)) from e
    return module


def settings_to_dict(module: ModuleType) -> Dict[str, Any]:
    """UPPERCASE module constants as a lower-case keyed mapping."""
    raw = {}
    for name in dir(module):
        if name.isupper() and not name.startswith("_"):
            raw[name.lower()] = getattr(module, name)
    return raw


def resolve_config_path(config: str) -> Path:
    """Turn a path or an experiment name into a settings file path.

    Raises:
        ConfigError: when neither a file nor a known experiment matches
    """
    candidate = Path(config)
    if candidate.is_dir():
        candidate = candidate / "settings.py"
    if candidate.is_file():
        return candidate.resolve()
    if validate_experiment_name(config):
        named = abs_path("experiments", config, "settings.py")
        if named.is_file():
            return named
    available = ", ".join(list_available_experiments()) or "none"
    raise ConfigError([f"config not found: {config} (available experiments: {available})"], config)


def read_config_file(path: Path) -> Dict[str, Any]:
    if path.suffix == ".py":
        return settings_to_dict(load_settings_module(path))
    if path.suffix == ".json":
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"invalid JSON at line {e.lineno}: {e.msg}"], str(path)) from e
        if not isinstance(data, dict):
            raise ConfigError(["top level must be a JSON object"], str(path))
        return data
    raise ConfigError([f"unsupported config format '{path.suffix}' (use .py or .json)"], str(path))


def experiment_name(path: Path) -> str:
    return path.parent.name if path.name == "settings.py" else path.stem


def default_output_dir(path: Path) -> str:
    return str(abs_path("output", experiment_name(path)))


def load_run_config(config: str, seed: Optional[int] = None, output_dir: Optional[str] = None,
                    workers: Optional[int] = None) -> RunConfig:
    """
    Load, override and validate a run configuration.

    Precedence: command-line flags, then FEDALIGN_* environment variables,
    then the file, then built-in defaults.

    Args:
        config: settings/JSON path or experiment name
        seed: --seed flag
        output_dir: --output-dir flag
        workers: --workers flag

    Raises:
        ConfigError: unreadable or invalid configuration
    """
    path = resolve_config_path(config)
    raw = read_config_file(path)
    raw = apply_env_overrides(raw)
    raw = apply_cli_overrides(raw, seed, output_dir, workers)
    if not raw.get("output_dir"):
        raw["output_dir"] = default_output_dir(path)
    log_debug("Config", f"Loaded {path}")
    return RunConfig.from_dict(raw, str(path))


def list_available_experiments() -> List[str]:
    experiments_dir = abs_path("experiments")
    if not experiments_dir.exists():
        return []
    return sorted(item.name for item in experiments_dir.iterdir()
                  if item.is_dir() and validate_experiment_name(item.name)
                  and (item / "settings.py").is_file())
