"""
Flat ``key=value`` configuration files and ``--set`` overrides.

    # desk run
    preset=tiny
    wavelet=sym7
    swt_levels=1
    lambda.LL=0.1
    generator.num_blocks=2

Values are typed with YAML scalar rules; dotted keys address nested fields and
``lambda.<label>`` / ``lambda.adv`` / ``lambda.perc`` address the loss weights.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .losses import default_weights
from .models import TrainConfig, full_preset

logger = logging.getLogger(__name__)

PRESETS = ("tiny", "full")
_YAML_BOOL_WORDS = {"on", "off", "yes", "no", "y", "n"}


def coerce_value(raw: str) -> Any:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw
    if isinstance(value, bool) and raw.lower() in _YAML_BOOL_WORDS:
        return raw
    if isinstance(value, (dict, list)):
        return raw
    if isinstance(value, str):
        # YAML 1.1 reads exponent-only floats such as 1e-4 as strings.
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_assignment(text: str) -> Tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"Expected key=value, got '{text}'")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"Empty key in '{text}'")
    return key, coerce_value(raw)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    values: Dict[str, Any] = {}
    for number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as e:
            raise ConfigError(f"{path}:{number}: {e}") from e
        values[key] = value
    return values


def _path_for(key: str) -> Tuple[str, ...]:
    parts = tuple(key.split("."))
    if parts[0] == "lambda":
        if len(parts) != 2:
            raise ConfigError(f"Weight keys look like lambda.<label>, got '{key}'")
        if parts[1] in ("adv", "perc"):
            return ("weights", parts[1])
        return ("weights", "subband", parts[1])
    return parts


def _set_nested(target: Dict[str, Any], path: Tuple[str, ...], value: Any) -> None:
    for part in path[:-1]:
        node = target.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Cannot set '{'.'.join(path)}': '{part}' is not a section")
        target = node
    target[path[-1]] = value


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _preset_values(name: str) -> Dict[str, Any]:
    if name == "tiny":
        return {}
    if name == "full":
        return full_preset()
    raise ConfigError(f"Unknown preset '{name}'; choose one of {', '.join(PRESETS)}")


def build_config(assignments: Dict[str, Any]) -> TrainConfig:
    """Turn flat dotted assignments into a validated TrainConfig."""
    assignments = dict(assignments)
    preset = str(assignments.pop("preset", "tiny"))
    nested: Dict[str, Any] = {}
    for key, value in assignments.items():
        _set_nested(nested, _path_for(key), value)

    values = _deep_merge(_preset_values(preset), nested)
    if "weights" in values:
        levels = values.get("swt_levels", 1)
        base = default_weights(levels).model_dump() if levels in (1, 2) else {}
        if "subband" in values["weights"] and set(values["weights"]["subband"]) - set(base.get("subband", {})):
            base["subband"] = {}
        values["weights"] = _deep_merge(base, values["weights"])

    try:
        return TrainConfig(**values)
    except ValidationError as e:
        messages = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigError("Invalid configuration", messages) from e


def load_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (), **explicit: Any) -> TrainConfig:
    """File values first, then ``--set`` overrides in order, then explicit keyword values."""
    assignments: Dict[str, Any] = read_config_file(path) if path else {}
    for text in overrides:
        key, value = parse_assignment(text)
        assignments[key] = value
    assignments.update({k: v for k, v in explicit.items() if v is not None})
    config = build_config(assignments)
    logger.debug("Loaded configuration %s", config.config_hash()[:12])
    return config
