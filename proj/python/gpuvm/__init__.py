"""Discrete-event simulator for GPU-driven paging over RDMA."""

import json

from . import _core
from ._core import (
    SCHEMA_VERSION,
    ConfigError,
    IoError,
    ParseError,
    StallError,
    config_keys,
    default_settings,
    gpu_bytes_for_level,
    little_law_queue_depth,
    oversubscription_level,
    uvm_fault_service_time,
)

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "IoError",
    "ParseError",
    "StallError",
    "compare",
    "config_keys",
    "default_settings",
    "gpu_bytes_for_level",
    "little_law_queue_depth",
    "oversubscription_level",
    "replay_check",
    "report_csv",
    "resolve_config",
    "run",
    "sweep",
    "uvm_fault_service_time",
]


def _dump(config):
    return json.dumps(config or {})


def resolve_config(config=None):
    """Full configuration after applying overrides (nested or dotted keys) to the defaults."""
    return json.loads(_core.resolve_config(_dump(config)))


def run(config=None):
    """Runs one experiment and returns its report as a dict."""
    return json.loads(_core.run_json(_dump(config)))


def sweep(config, axis, values, threads=0):
    """Runs one experiment per value of axis (page_size, queue_count, oversubscription, nic_count)."""
    return json.loads(_core.sweep_json(_dump(config), axis, [float(v) for v in values], threads))["runs"]


def compare(reports, baseline="uvm"):
    """Speedups of each report against the baseline mode's kernel time."""
    return json.loads(_core.compare_json(json.dumps(list(reports)), baseline))


def report_csv(reports):
    return _core.report_csv(json.dumps(list(reports)))


def replay_check(config, seed, runs=2):
    return _core.replay_check(_dump(config), seed, runs)
