"""YAML experiment configuration with flat ``key=value`` overrides and a canonical hash."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .harness import ExperimentConfig


def load_config_dict(path) -> dict:
    """Read a YAML mapping; an absent path gives an empty mapping."""
    if path is None:
        return {}
    p = Path(path)
    with open(p) as fh:  # OSError propagates with the path in its message
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{p}: not valid YAML ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{p}: top level must be a mapping")
    return data


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b=value`` strings to a nested mapping; values are parsed as YAML scalars."""
    out = json.loads(json.dumps(data))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [k for k in key.strip().split(".") if k]
        if not parts:
            raise ConfigurationError(f"override {item!r} has an empty key")
        node = out
        for k in parts[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r}: {k} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return out


def build_config(path=None, overrides=()) -> ExperimentConfig:
    """Load, override and validate; unknown keys raise ``ConfigurationError``."""
    data = apply_overrides(load_config_dict(path), overrides)
    try:
        cfg = ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from None
    return cfg.validate()


def config_hash(cfg: ExperimentConfig, length: int = 12) -> str:
    """Hash of the full effective configuration (every field, defaults included)."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:length]


def run_tag(cfg: ExperimentConfig) -> str:
    return f"{config_hash(cfg)}_s{cfg.seed}"


def write_effective_config(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"config_{run_tag(cfg)}.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
    return path
