"""Python front end for the FBSDE lab core."""

import json
from pathlib import Path

from . import _core
from ._core import (
    ARTIFACT_VERSION,
    CoefficientEvaluationError,
    ConfigError,
    Error,
    InvalidArgument,
    IoError,
    NonFiniteState,
    NumericalError,
    PicardDivergence,
    audit_constant_growth,
    compute_kp,
    smallness_gates,
)

__all__ = [
    "ARTIFACT_VERSION",
    "CoefficientEvaluationError",
    "ConfigError",
    "Error",
    "InvalidArgument",
    "IoError",
    "NonFiniteState",
    "NumericalError",
    "PicardDivergence",
    "audit_constant_growth",
    "canonical_config",
    "compute_kp",
    "read_table",
    "run_experiment",
    "smallness_gates",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def canonical_config(config):
    """Config (dict or JSON text) with all defaults filled in."""
    return json.loads(_core.canonical_config(_text(config)))


def run_experiment(config, output_dir=None):
    """Run an experiment and return its report as a dict."""
    out = None if output_dir is None else str(output_dir)
    return json.loads(_core.run_experiment(_text(config), out))


def read_table(path):
    """CSV table as a dict of column name -> list of floats."""
    header, rows = _core.read_table(str(Path(path)))
    return {name: [row[i] for row in rows] for i, name in enumerate(header)}
