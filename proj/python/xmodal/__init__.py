"""Cross-modal embedding training for apparent personality regression."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    UsageError,
    bell_loss,
    classify_score,
    r_acc,
    similarity_matrix,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "NumericError",
    "UsageError",
    "bell_loss",
    "classify_score",
    "config_hash",
    "default_config",
    "generate_synthetic",
    "r_acc",
    "resolve_config",
    "run_cli",
    "similarity_matrix",
    "train",
]


def default_config(preset="desk"):
    return _json.loads(_core.default_config(preset))


def resolve_config(overlay=None):
    """Full effective config for a partial overlay."""
    return _json.loads(_core.resolve_config(_json.dumps(overlay or {})))


def config_hash(config):
    return _core.config_hash(_json.dumps(config))


def generate_synthetic(overlay=None):
    """Dict of train/val/test splits, each with ids, traits and per-modality feature arrays."""
    return _core.generate_synthetic(_json.dumps(overlay or {}))


def train(overlay=None):
    return _json.loads(_core.train(_json.dumps(overlay or {})))


def run_cli(*args):
    """Runs the command-line tool in process; returns (exit_code, stdout, stderr)."""
    if not hasattr(_core, "run_cli"):
        raise RuntimeError("built without the command-line tool")
    return _core.run_cli([str(a) for a in args])
