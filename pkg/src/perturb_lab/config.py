"""Flat key-value run configuration with CLI overrides.

Config files hold one ``key = value`` per line; blank lines and ``#``
comments are ignored. Report CSVs embed their resolved configuration as
``#cfg key = value`` lines, and such a file can be fed back to
:func:`parse_config` to reproduce the run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ARCH_CONV, ARCH_MEANPOOL
from .perturb import FLIP_ORDERS, STRATEGIES

DEFAULT_SEED = 7
SEED_ENV_VAR = "PERTURB_LAB_SEED"

ARCH_NAMES = {"meanpool": ARCH_MEANPOOL, "conv": ARCH_CONV}


class ConfigError(ValueError):
    """A configuration key is unknown, missing, or out of range."""


@dataclass
class RunSpec:
    """Fully resolved run configuration."""

    dataset: str | None = None
    labels: dict[str, int] | None = None
    embeddings: str | None = None
    strategies: tuple[str, ...] = STRATEGIES
    p: tuple[float, ...] = (0.7, 0.8, 0.9, 0.95)
    sigma: tuple[float, ...] = (0.001, 0.01, 0.1)
    fractions: tuple[float, ...] = (0.1, 0.3, 1.0)
    runs: int = 5
    grid_runs: int = 3
    seed: int = DEFAULT_SEED
    arch: str = "meanpool"
    filters: int = 8
    width: int = 3
    dim: int = 16
    emb_scale: float = 0.25
    trainable_embeddings: bool = True
    min_count: int = 1
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 16
    dev_fraction: float = 0.2
    cv_folds: int | None = None
    test_fraction: float = 0.2
    flip_order: str = "descending"
    arrow_threshold: float = 0.003
    out: str | None = None


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _parse_optional_int(key: str, raw: str) -> int | None:
    if raw.strip().lower() in ("", "none"):
        return None
    return _parse_int(key, raw)


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_float_list(key: str, raw: str) -> tuple[float, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers")
    return tuple(_parse_float(key, s) for s in items)


def _parse_str_list(key: str, raw: str) -> tuple[str, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated list")
    return tuple(items)


def _parse_optional_str(key: str, raw: str) -> str | None:
    return None if raw.strip().lower() in ("", "none") else raw.strip()


def _parse_labels(key: str, raw: str) -> dict[str, int] | None:
    if raw.strip().lower() in ("", "none"):
        return None
    out: dict[str, int] = {}
    for part in raw.split(","):
        name, sep, idx = part.strip().partition(":")
        if not sep:
            raise ConfigError(f"{key}: expected 'name:index' entries, got {part!r}")
        out[name] = _parse_int(key, idx)
    return out


_PARSERS = {
    "dataset": _parse_optional_str,
    "labels": _parse_labels,
    "embeddings": _parse_optional_str,
    "strategies": _parse_str_list,
    "p": _parse_float_list,
    "sigma": _parse_float_list,
    "fractions": _parse_float_list,
    "runs": _parse_int,
    "grid_runs": _parse_int,
    "seed": _parse_int,
    "arch": lambda k, r: r.strip(),
    "filters": _parse_int,
    "width": _parse_int,
    "dim": _parse_int,
    "emb_scale": _parse_float,
    "trainable_embeddings": _parse_bool,
    "min_count": _parse_int,
    "epochs": _parse_int,
    "lr": _parse_float,
    "batch_size": _parse_int,
    "dev_fraction": _parse_float,
    "cv_folds": _parse_optional_int,
    "test_fraction": _parse_float,
    "flip_order": lambda k, r: r.strip(),
    "arrow_threshold": _parse_float,
    "out": _parse_optional_str,
}

CONFIG_KEYS = tuple(_PARSERS)


def _check_range(spec: RunSpec) -> None:
    for key in ("p", "fractions"):
        for v in getattr(spec, key):
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{key}: values must be in (0, 1], got {v}")
    for v in spec.sigma:
        if v < 0:
            raise ConfigError(f"sigma: values must be >= 0, got {v}")
    for s in spec.strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"strategies: unknown strategy {s!r}")
    if spec.arch not in ARCH_NAMES:
        raise ConfigError(f"arch: must be one of {sorted(ARCH_NAMES)}, got {spec.arch!r}")
    if spec.flip_order not in FLIP_ORDERS:
        raise ConfigError(f"flip_order: must be one of {FLIP_ORDERS}")
    if spec.runs < 1:
        raise ConfigError(f"runs: must be >= 1, got {spec.runs}")
    if spec.grid_runs < 1:
        raise ConfigError(f"grid_runs: must be >= 1, got {spec.grid_runs}")
    if spec.epochs < 1:
        raise ConfigError(f"epochs: must be >= 1, got {spec.epochs}")
    if spec.lr <= 0:
        raise ConfigError(f"lr: must be > 0, got {spec.lr}")
    if spec.batch_size < 1:
        raise ConfigError(f"batch_size: must be >= 1, got {spec.batch_size}")
    if not 0.0 < spec.dev_fraction < 1.0:
        raise ConfigError(f"dev_fraction: must be in (0, 1), got {spec.dev_fraction}")
    if spec.cv_folds is not None and spec.cv_folds < 2:
        raise ConfigError(f"cv_folds: must be >= 2, got {spec.cv_folds}")
    if not 0.0 < spec.test_fraction < 1.0:
        raise ConfigError(f"test_fraction: must be in (0, 1), got {spec.test_fraction}")
    if spec.dim < 1:
        raise ConfigError(f"dim: must be >= 1, got {spec.dim}")
    if spec.emb_scale <= 0:
        raise ConfigError(f"emb_scale: must be > 0, got {spec.emb_scale}")
    if spec.filters < 1 or spec.width < 1:
        raise ConfigError("filters/width: must be >= 1")
    if spec.min_count < 1:
        raise ConfigError(f"min_count: must be >= 1, got {spec.min_count}")
    if spec.arrow_threshold < 0:
        raise ConfigError(f"arrow_threshold: must be >= 0, got {spec.arrow_threshold}")
    if spec.labels is not None:
        indices = sorted(spec.labels.values())
        if indices != list(range(len(indices))):
            raise ConfigError("labels: indices must be exactly 0..C-1")


def _read_config_lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    embedded = [ln[len("#cfg "):] for ln in lines if ln.startswith("#cfg ")]
    if embedded:
        return embedded
    return [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def parse_config(path: str | Path | None = None,
                 overrides: dict | None = None) -> RunSpec:
    """Build a RunSpec from defaults, an optional config file, and overrides.

    Precedence: defaults < ``PERTURB_LAB_SEED`` < file < overrides. String
    override values are parsed like file values; non-strings are taken as-is.
    """
    values: dict = {}
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        values["seed"] = _parse_int("seed", env_seed)
    if path is not None:
        for line in _read_config_lines(path):
            key, sep, raw = line.partition("=")
            if not sep:
                raise ConfigError(f"malformed config line {line!r} (expected 'key = value')")
            key = key.strip()
            if key not in _PARSERS:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = _PARSERS[key](key, raw.strip())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _PARSERS[key](key, value) if isinstance(value, str) else value

    spec = RunSpec(**values)
    spec.strategies = tuple(spec.strategies)
    spec.p = tuple(spec.p)
    spec.sigma = tuple(spec.sigma)
    spec.fractions = tuple(spec.fractions)
    _check_range(spec)
    return spec


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ",".join(f"{k}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_lines(spec: RunSpec) -> list[str]:
    """The full configuration as ``key = value`` lines, in schema order.

    ``parse_config`` on these lines reproduces ``spec`` exactly.
    """
    by_name = {f.name: getattr(spec, f.name) for f in fields(spec)}
    return [f"{key} = {_format_value(by_name[key])}" for key in CONFIG_KEYS]
