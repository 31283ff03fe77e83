"""Run configuration: dataclass, key=value files, env default, overrides.

Precedence (low to high): built-in defaults, config file (--config or the
SESSION_MINER_CONFIG env var), then explicit overrides (CLI flags /
--set pairs).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

from .canonlog import ADAPTERS
from .errors import ConfigError
from .sessionize import _minutes_of_day

ENV_CONFIG = "SESSION_MINER_CONFIG"


@dataclass
class RunConfig:
    adapter: str = "ct-style"
    gap_threshold_mins: float = 7.5
    min_active_students: int = 5
    idle_mins: float | str = 2.0  # positive minutes, or "auto" for mean + 3 sd
    school_start: str = "07:00"
    school_end: str = "15:00"
    timezone: str = "UTC"
    year_start_month: int = 9  # first month of the school year (term ordering)
    outdir: str = "out"
    seed: int = 0
    reject_ceiling: float = 0.01
    rules: str | None = None  # gaming rules text; None means the default rule
    tendency_max_iter: int = 200
    tendency_tol: float = 1e-6
    threads: int = 1
    figures: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


_INT_KEYS = {"min_active_students", "year_start_month", "seed", "tendency_max_iter", "threads"}
_FLOAT_KEYS = {"gap_threshold_mins", "reject_ceiling", "tendency_tol"}
_BOOL_KEYS = {"figures"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key == "idle_mins":
        return "auto" if value.strip().lower() == "auto" else float(value)
    return value


def parse_run_config(text: str) -> dict:
    """key=value lines -> override dict; # comments and blanks skipped."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ConfigError(f"expected key=value in config, got {ln!r}")
        key, value = (s.strip() for s in ln.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def validate_config(config: RunConfig) -> RunConfig:
    if config.adapter not in ADAPTERS:
        raise ConfigError(f"unknown adapter {config.adapter!r}; expected one of {ADAPTERS}")
    if config.gap_threshold_mins <= 0:
        raise ConfigError("gap_threshold_mins must be positive")
    if config.min_active_students < 1:
        raise ConfigError("min_active_students must be >= 1")
    if config.idle_mins != "auto":
        if not isinstance(config.idle_mins, (int, float)) or config.idle_mins <= 0:
            raise ConfigError("idle_mins must be positive minutes or 'auto'")
    if not 1 <= config.year_start_month <= 12:
        raise ConfigError("year_start_month must be 1..12")
    if not 0 <= config.reject_ceiling <= 1:
        raise ConfigError("reject_ceiling must be in [0, 1]")
    if config.threads < 1:
        raise ConfigError("threads must be >= 1")
    if config.tendency_max_iter < 1 or config.tendency_tol <= 0:
        raise ConfigError("tendency convergence settings must be positive")
    lo, hi = _minutes_of_day(config.school_start), _minutes_of_day(config.school_end)
    if lo >= hi:
        raise ConfigError("school hours window must satisfy start < end")
    return config


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from file + overrides."""
    config = RunConfig()
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path:
        with open(path) as fh:
            file_values = parse_run_config(fh.read())
        for key, value in file_values.items():
            setattr(config, key, value)
    for key, value in (overrides or {}).items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, value) if isinstance(value, str) else value)
    return validate_config(config)
