"""Decay of a discrete state into a tight-binding continuum: simulation, analytics, fitting and a synthetic lab pipeline."""

from .errors import ConvergenceError, DecayLabError, FitError, ParameterError
from .model import PRESETS, ChainParams, validate_params

__version__ = "0.1.0"

__all__ = [
    "ChainParams",
    "ConvergenceError",
    "DecayLabError",
    "FitError",
    "ParameterError",
    "PRESETS",
    "validate_params",
]
