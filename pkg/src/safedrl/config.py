"""Run configuration: sectioned key-value files with typed defaults and overrides.

Schema (section.key = default):

  [run]    seed = 0; workers = 1
  [agent]  every TrainingConfig field (gamma, learning_rate, buffer_size, ...)
  [eval]   master_seed = 0; n_scenarios = 30; emergency_jerk_limit = 5.0 (m/s^3);
           alpha = 1.0; alpha_grid; noise_levels (sigma_d, m); jerk_limits (m/s^3);
           policies (comma list of rule, dqn, iqn)
  [paths]  dqn_checkpoint; iqn_checkpoint
"""
from __future__ import annotations

import configparser
import io
from dataclasses import fields

from .agents.core import TrainingConfig
from .errors import ConfigurationError


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _names(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _schema() -> dict:
    agent = {}
    for f in fields(TrainingConfig):
        default = f.default
        agent[f.name] = (type(default), default)
    return {
        "run": {"seed": (int, 0), "workers": (int, 1)},
        "agent": agent,
        "eval": {
            "master_seed": (int, 0),
            "n_scenarios": (int, 30),
            "emergency_jerk_limit": (float, 5.0),
            "alpha": (float, 1.0),
            "alpha_grid": (_floats, tuple(round(0.1 * k, 10) for k in range(1, 11))),
            "noise_levels": (_floats, (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)),
            "jerk_limits": (_floats, (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)),
            "policies": (_names, ("rule", "dqn", "iqn")),
        },
        "paths": {"dqn_checkpoint": (str, ""), "iqn_checkpoint": (str, "")},
    }


SCHEMA = _schema()


def _convert(section: str, key: str, value):
    try:
        conv, _ = SCHEMA[section][key]
    except KeyError:
        raise ConfigurationError(f"unknown config key '{section}.{key}'") from None
    try:
        if conv is bool:
            return _bool(value)
        if conv is int and isinstance(value, str):
            return int(value.strip())
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for '{section}.{key}': {value!r}") from exc


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def load_config(path=None, text: str | None = None) -> dict:
    """Defaults, updated by the file at ``path`` (or ``text``)."""
    cfg = defaults()
    if path is None and text is None:
        return cfg
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
        else:
            with open(path) as fh:
                cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{sec}]")
        for key, value in cp[sec].items():
            cfg[sec][key] = _convert(sec, key, value)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; every other key is left untouched."""
    out = {sec: dict(vals) for sec, vals in cfg.items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown config section '{sec}'")
        out[sec][key] = _convert(sec, key, value)
    return out


def training_config(cfg: dict) -> TrainingConfig:
    return TrainingConfig(**cfg["agent"]).validate()


def _text(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_text(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: dict) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for sec in SCHEMA:
        cp[sec] = {k: _text(v) for k, v in cfg[sec].items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
