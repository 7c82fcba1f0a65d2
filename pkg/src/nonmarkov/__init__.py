"""Photonic dephasing simulator and non-Markovianity measures."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AliasingError,
    ConfigError,
    ConvergenceError,
    FitError,
    InvalidStateError,
    NonMarkovError,
)
