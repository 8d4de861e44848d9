"""TOML configuration loading with strict key checking."""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SECTIONS = ("basis", "mean", "design", "risk", "simulation", "figures")

SECTION_KEYS = {
    "design": {"families", "sigma2", "cdf_points", "tables", "curve_points"},
    "risk": {"designs", "noise_variance", "worst_case_sigma2", "baselines"},
    "simulation": {"designs", "noise_variance", "n", "replications", "seed", "coupling", "mode",
                   "workers", "chunk_size", "convergence_n"},
    "figures": {"sigma2", "degrees", "points", "mean", "truncnorm"},
}


def load_config(path):
    """Parse a TOML file; unknown sections or keys raise :class:`ConfigError` naming the key."""
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return validate(cfg)


def loads_config(text):
    try:
        return validate(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None


def validate(cfg):
    for key, value in cfg.items():
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"config entry {key!r} must be a table")
        allowed = SECTION_KEYS.get(key)
        if allowed is not None:
            extra = set(value) - allowed
            if extra:
                raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(sorted(extra))}")
    return cfg
