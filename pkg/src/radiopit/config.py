"""JSON run configuration shared by the CLI subcommands.

A run config has up to five sections::

    {"pit": {...}, "synth": {...}, "tta": {...}, "norm": {...}, "experiment": {...}}

Unknown sections or keys are rejected, and every section is validated
before any work starts.
"""
from __future__ import annotations

import dataclasses
import json

from .errors import ConfigError, RadioPitError
from .grid import NormRange
from .pit.model import PiTConfig
from .pit.train import TtaConfig
from .synth import SynthConfig

EXPERIMENT_KEYS = {
    "epochs": int, "batch": int, "lr": float, "weight_decay": float,
    "known": int, "query": int, "count": int, "points": int, "seed": int,
}
_SECTIONS = {"pit": PiTConfig, "synth": SynthConfig, "tta": TtaConfig, "norm": NormRange}


def _check_type(section, key, value, want):
    ok = isinstance(value, want) and not isinstance(value, bool)
    if want is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {want.__name__}, got {value!r}")


def validate_run_config(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        bad = set(section) - set(fields)
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(bad))}")
        for key, value in section.items():
            default = getattr(cls(), key)
            _check_type(name, key, value, type(default))
        try:
            cls(**section)
        except (RadioPitError, TypeError) as exc:
            raise ConfigError(f"invalid {name!r} section: {exc}") from exc
    exp = doc.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("section 'experiment' must be an object")
    bad = set(exp) - set(EXPERIMENT_KEYS)
    if bad:
        raise ConfigError(f"unknown keys in 'experiment': {', '.join(sorted(bad))}")
    for key, value in exp.items():
        _check_type("experiment", key, value, EXPERIMENT_KEYS[key])
    return doc


def load_run_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_run_config(doc)
