"""Config files (TOML or JSON) and their translation into library objects.

Precedence, lowest first: built-in defaults, the config file, ``--set``
overrides, dedicated command-line flags.
"""

from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .posterior import Boundary, PriorSpec
from .simulation import AccrualModel, TrialConfig
from .stats import TruncGammaPrior


class ConfigError(ValueError):
    pass


DESIGN_KEYS = {
    "control_median", "treatment_median", "lower", "upper", "s_likely", "shape", "scale",
    "accrual", "rate", "fup", "schedule", "alpha", "beta", "s_analysis",
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table/object")
    data = copy.deepcopy(data)
    data.setdefault("_base_dir", str(path.parent.resolve()))
    return data


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: dict, sets) -> dict:
    """Apply ``section.key=value`` strings; values use TOML syntax."""
    cfg = copy.deepcopy(cfg)
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-table {key!r}")
        node[parts[-1]] = _parse_value(value.strip())
    return cfg


def section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _require(sec: dict, key: str, where: str):
    if key not in sec:
        raise ConfigError(f"missing required field {where}.{key}")
    return sec[key]


def _num(sec, key, where, default=None):
    v = sec.get(key, default)
    if v is None:
        raise ConfigError(f"missing required field {where}.{key}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


def s_prior_from(cfg: dict) -> TruncGammaPrior:
    d = section(cfg, "design")
    try:
        return TruncGammaPrior(
            _num(d, "shape", "design", 1.0),
            _num(d, "scale", "design", 1.0),
            _num(d, "lower", "design"),
            _num(d, "upper", "design"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid S prior: {exc}") from exc


def trial_config_from(cfg: dict, schedule=None) -> TrialConfig:
    """Build a :class:`TrialConfig` from the [design], [boundary] and [prior] tables."""
    d = section(cfg, "design")
    unknown = set(d) - DESIGN_KEYS
    if unknown:
        raise ConfigError(f"unknown design field(s): {sorted(unknown)}")
    b = section(cfg, "boundary")
    p = section(cfg, "prior")
    sched = schedule if schedule is not None else _require(d, "schedule", "design")
    if not isinstance(sched, (list, tuple)) or not all(isinstance(x, int) for x in sched):
        raise ConfigError("design.schedule must be a list of integers")
    try:
        prior = None
        if p:
            prior = PriorSpec(
                _num(p, "a0", "prior"), _num(p, "b0", "prior"),
                _num(p, "a1", "prior"), _num(p, "b1", "prior"),
            )
        s_an = d.get("s_analysis")
        return TrialConfig(
            control_median=_num(d, "control_median", "design"),
            treatment_median=_num(d, "treatment_median", "design"),
            s_likely=_num(d, "s_likely", "design"),
            s_prior=s_prior_from(cfg),
            schedule=tuple(sched),
            boundary=Boundary(_num(b, "lambda", "boundary", 0.95), _num(b, "gamma", "boundary", 1.0)),
            accrual=AccrualModel(str(d.get("accrual", "deterministic")), _num(d, "rate", "design", 6.0)),
            fup=_num(d, "fup", "design", 6.0),
            prior=prior,
            s_analysis=None if s_an is None else float(s_an),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid design: {exc}") from exc


def resolve_path(cfg: dict, value: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = Path(cfg.get("_base_dir", ".")) / p
    return p
