"""Flat key=value run-configuration files.

Keys mirror the TrainConfig and EnvConfig field names; vial geometry uses
the vial_ prefix (vial_inner_radius, vial_base_z, vial_rim_z,
vial_center_x, vial_center_y).  Lines starting with '#' and blank lines
are ignored.  List-valued fields take comma-separated entries, e.g.
``hidden = 64,64`` or ``curriculum = RimStart,OutsideStart``.  Unknown
keys are rejected.
"""

from __future__ import annotations

from dataclasses import fields, replace
from typing import Dict, Optional

from .env import EnvConfig
from .geometry import Cylinder
from .training import TrainConfig

__all__ = ["parse_config_text", "load_config", "apply_overrides", "config_keys"]

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"env"}
_ENV_KEYS = {f.name for f in fields(EnvConfig)} - {"vial"}
_VIAL_KEYS = {
    "vial_inner_radius": "inner_radius",
    "vial_base_z": "base_z",
    "vial_rim_z": "rim_z",
    "vial_center_x": None,
    "vial_center_y": None,
}

_INT_TUPLES = {"hidden", "seeds"}
_STR_TUPLES = {"curriculum"}
_BOOLS = {"record_wallclock"}
_STRINGS = {"algorithm", "profile", "stage", "reward_mode"}
_INTS = {
    "run_seed",
    "total_episodes",
    "eval_every_episodes",
    "eval_episodes",
    "batch_size",
    "buffer_capacity",
    "her_k",
    "n_quantiles",
    "drop_per_net",
    "horizon",
}


def config_keys() -> list:
    """All accepted config-file keys, sorted."""
    return sorted(_TRAIN_KEYS | _ENV_KEYS | set(_VIAL_KEYS))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_TUPLES:
        return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
    if key in _STR_TUPLES:
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    if key in _BOOLS:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
    if key in _STRINGS:
        return raw
    if key in _INTS:
        return int(raw)
    return float(raw)


def apply_overrides(base: TrainConfig, values: Dict[str, str]) -> TrainConfig:
    """Apply raw string key/values on top of a config; unknown keys raise."""
    unknown = sorted(set(values) - _TRAIN_KEYS - _ENV_KEYS - set(_VIAL_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")

    train_updates = {}
    env_updates = {}
    vial_updates = {}
    center = list(base.env.vial.center_xy)
    for key, raw in values.items():
        value = _parse_value(key, raw)
        if key in _TRAIN_KEYS:
            train_updates[key] = value
        elif key in _ENV_KEYS:
            env_updates[key] = value
        elif key == "vial_center_x":
            center[0] = value
        elif key == "vial_center_y":
            center[1] = value
        else:
            vial_updates[_VIAL_KEYS[key]] = value

    vial = base.env.vial
    if vial_updates or center != list(vial.center_xy):
        vial = replace(vial, center_xy=(center[0], center[1]), **vial_updates)
    env = replace(base.env, vial=vial, **env_updates)
    return replace(base, env=env, **train_updates)


def parse_config_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = raw.strip()
    return apply_overrides(base or TrainConfig(), values)


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base=base)
