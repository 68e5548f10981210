"""Flat TOML configuration shared by every command.

Keys mirror the fields of the simulation, GLM, FAST and benchmark settings.
Dashes and underscores are interchangeable in key names; unknown keys are
errors. An optional `[fastmap]` table is honored.
"""

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import tomli

__all__ = [
    "CONFIG_NAME",
    "DEFAULTS",
    "ConfigError",
    "config_hash",
    "load_config",
    "parse_ar_cell",
    "resolve_config",
]

CONFIG_NAME = "fastmap"

DEFAULTS: dict[str, Any] = {
    # simulation
    "phantom": "bundled",
    "sigma0": [240.0, 300.0, 400.0],
    "ar_cells": [
        "1:equal",
        "2:equal",
        "3:equal",
        "4:equal",
        "4:decreasing",
        "4:increasing",
        "4:dec-inc",
        "4:inc-dec",
    ],
    "replicates": 25,
    "T": 96,
    "TR": 7.0,
    "n_blocks": 16,
    "block_length": 6,
    "drift_order": 1,
    "presmooth_fwhm": 0.0,
    # glm
    "p_max": 5,
    # fast
    "alphas": [0.05, 0.025, 0.01, 0.001],
    "variants": ["am", "ar"],
    "sided": "one",
    "h_min": 0.5,
    "h_max": 20.0,
    "max_iter": 20,
    "min_iter": 1,
    "stop_at_h_max": False,
    # cluster thresholding
    "ct_alpha_vox": 0.001,
    "ct_fw_alpha": 0.05,
    "ct_mc_iters": 1000,
    "ct_fixed_sizes": [10, 2],
    # runner
    "master_seed": 20111011,
    "jobs": 1,
}


class ConfigError(ValueError):
    """Configuration file or value is invalid."""


def _canonical(key: str) -> str:
    name = key.replace("-", "_")
    # `t` and `tr` are accepted for the upper-case sampling keys.
    return {"t": "T", "tr": "TR"}.get(name, name)


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Return `value` converted to the type of `default`."""

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value

    if isinstance(default, list):
        if not isinstance(value, list):
            value = [value]
        if not value:
            raise ConfigError(f"{key}: expected a nonempty list")
        return [_coerce(key, item, default[0]) for item in value]

    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, int) and value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return type(default)(value)

    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def parse_ar_cell(text: str) -> tuple[int, str]:
    """Split an AR cell such as `"4:decreasing"` into `(4, "decreasing")`."""

    order, sep, shape = text.partition(":")
    if not order.strip().isdigit():
        raise ConfigError(f"ar_cells: expected 'p:shape', got {text!r}")
    return int(order), (shape.strip() if sep else "equal")


def resolve_config(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Return DEFAULTS updated with `overrides`, coerced and checked."""

    config = copy.deepcopy(DEFAULTS)
    for key, value in (overrides or {}).items():
        name = _canonical(key)
        if name not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        config[name] = _coerce(key, value, DEFAULTS[name])

    if config["replicates"] < 1:
        raise ConfigError(f"replicates must be >= 1, got {config['replicates']}")
    if config["jobs"] == 0:
        raise ConfigError("jobs must be nonzero (negative counts back from all cores)")
    if config["sided"] not in ("one", "two"):
        raise ConfigError(f"sided must be 'one' or 'two', got {config['sided']!r}")
    for variant in config["variants"]:
        if variant not in ("am", "ar"):
            raise ConfigError(f"variants: expected 'am' or 'ar', got {variant!r}")
    for cell in config["ar_cells"]:
        parse_ar_cell(cell)
    return config


def load_config(path: str | Path, section: str | None = CONFIG_NAME) -> dict[str, Any]:
    """Read the TOML file at `path` and return the resolved configuration."""

    path = Path(path).expanduser()
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err

    if section is not None and isinstance(raw.get(section), dict):
        raw = raw[section]
    nested = [key for key, value in raw.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(f"{path}: config is flat; unexpected table(s) {nested}")
    return resolve_config(raw)


def config_hash(config: dict[str, Any]) -> str:
    """Return the SHA-256 of the canonical JSON form of `config`."""

    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
