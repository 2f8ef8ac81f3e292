"""Traces of Fourier integral operators on submanifolds: hypothesis checks, amplitudes, oracles."""

from ._fiotrace import (
    Check,
    ConfigError,
    builtin_names,
    check_config,
    check_scenario,
    normalize_ini,
    scenario_ini,
)

__all__ = [
    "Check",
    "ConfigError",
    "builtin_names",
    "check_config",
    "check_scenario",
    "normalize_ini",
    "scenario_ini",
]
