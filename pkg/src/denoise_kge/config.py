"""Flat YAML run configuration: defaults table, overrides and validation."""

from __future__ import annotations

import os
from dataclasses import fields

import yaml

from .train import TrainConfig

OUTPUT_ROOT_ENV = "DENOISE_KGE_OUTPUT_ROOT"

_TRAIN_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}

# key -> default. The type of the default is the type a value must have
# (ints are accepted where floats are expected; None means "optional path").
DEFAULTS: dict = {
    # data
    "dataset": "grid",
    "train_path": None,
    "valid_path": None,
    "test_path": None,
    "separator": "\t",
    "grid_side": 11,
    "grid_relations": 12,
    "chain_length": 20,
    "data_seed": 0,
    # training
    **_TRAIN_DEFAULTS,
    # evaluation / certification
    "checkpoint": None,
    "split": "test",
    "alphas": [2.0, 5.0],
    "n0": 1000,
    "confidence": 0.999,
    "chunk": 250,
    "workers": 1,
    "max_queries": 0,
    "radii": [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
    # multi-hop
    "hops": [1, 2, 3],
    "path_cap": 1000,
    "beam": 32,
    # grid search
    "grid_alphas": [0.1, 0.2, 0.5, 1.0],
    "grid_lams": [0.1, 0.2, 0.5, 1.0],
    "output_dir": None,
}

_CHOICES = {
    "dataset": ("grid", "chain", "files"),
    "split": ("train", "valid", "test"),
    "family": ("TransE", "DistMult", "ComplEx", "RotatE"),
}

_PATHS = ("train_path", "valid_path", "test_path", "checkpoint")


class ConfigError(ValueError):
    """Invalid configuration; the message lists every offending field."""


def _check_type(key, value, default):
    if default is None:
        return value is None or isinstance(value, str)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
    return isinstance(value, type(default))


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def load_config(path: str | None, overrides=(), command: str | None = None) -> dict:
    """Defaults, then the YAML file, then ``key=value`` overrides; validated.

    With ``command`` the cross-field checks of :func:`validate_run` run too,
    and all problems are reported in one :class:`ConfigError`.
    """
    cfg = dict(DEFAULTS)
    errors = []
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a key-value mapping")
        cfg.update(loaded)
    for item in overrides:
        key, value = parse_override(item)
        cfg[key] = value
    unknown = sorted(set(cfg) - set(DEFAULTS))
    errors += [f"{k}: unknown key" for k in unknown]
    for key, default in DEFAULTS.items():
        value = cfg[key]
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            cfg[key] = value = float(value)
        if not _check_type(key, value, default):
            errors.append(f"{key}: expected {type(default).__name__}, got {value!r}")
    for key, allowed in _CHOICES.items():
        if cfg[key] not in allowed:
            errors.append(f"{key}: must be one of {allowed}, got {cfg[key]!r}")
    typed = len(errors) == len(unknown)
    for key in unknown:
        del cfg[key]
    if command is not None and typed:
        errors += _run_errors(cfg, command)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def validate_run(cfg: dict, command: str) -> None:
    errors = _run_errors(cfg, command)
    if errors:
        raise ConfigError("; ".join(errors))


def _run_errors(cfg: dict, command: str) -> list[str]:
    """Cross-field checks that depend on the command."""
    errors = []
    try:
        train_config(cfg).validate()
    except ValueError as exc:
        errors.append(str(exc))
    if cfg["dataset"] == "files" and cfg["train_path"] is None:
        errors.append("train_path: required when dataset is 'files'")
    for key in _PATHS:
        if cfg[key] is not None and not os.path.exists(cfg[key]):
            errors.append(f"{key}: file not found: {cfg[key]}")
    if command in ("eval", "certify", "multihop") and cfg["checkpoint"] is None:
        errors.append("checkpoint: required for this command")
    if cfg["n0"] < 1:
        errors.append("n0: must be >= 1")
    if not 0.0 < cfg["confidence"] < 1.0:
        errors.append("confidence: must be in (0, 1)")
    if any(a < 0 for a in cfg["alphas"]):
        errors.append("alphas: must be >= 0")
    if any(h not in (1, 2, 3) for h in cfg["hops"]) or not cfg["hops"]:
        errors.append("hops: values must be 1, 2 or 3")
    if cfg["beam"] < 1:
        errors.append("beam: must be >= 1")
    if command == "grid" and not (cfg["grid_alphas"] and cfg["grid_lams"]):
        errors.append("grid_alphas/grid_lams: must be non-empty")
    return errors


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in _TRAIN_DEFAULTS})


def output_dir(cfg: dict, command: str) -> str:
    if cfg["output_dir"]:
        return cfg["output_dir"]
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), command)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
