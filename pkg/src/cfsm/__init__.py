"""Continual finite-sum minimization toolkit."""

from .core import ComponentStream, Constants, Domain, FoLedger, Oracle, prefix_gradient, prefix_value, project
from .errors import (
    CfsmError,
    ConfigError,
    InvalidInputError,
    InvalidStageError,
    LibsvmParseError,
    NumericError,
    PreconditionError,
)

__version__ = "0.1.0"

__all__ = [
    "CfsmError",
    "ComponentStream",
    "ConfigError",
    "Constants",
    "Domain",
    "FoLedger",
    "InvalidInputError",
    "InvalidStageError",
    "LibsvmParseError",
    "NumericError",
    "Oracle",
    "PreconditionError",
    "prefix_gradient",
    "prefix_value",
    "project",
]
