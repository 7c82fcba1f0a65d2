"""Exception types shared across the package."""


class NonMarkovError(Exception):
    """Base class for errors raised by this package."""


class InvalidStateError(NonMarkovError, ValueError):
    """A matrix violates the density-matrix invariants."""


class ConfigError(NonMarkovError, ValueError):
    """A configuration value is out of range or inconsistent."""


class FitError(NonMarkovError, RuntimeError):
    """Spectral fit did not converge or left too large a residual."""


class AliasingError(NonMarkovError, ValueError):
    """The frequency grid is too coarse for the requested interaction times."""


class ConvergenceError(NonMarkovError, RuntimeError):
    """An optimizer stalled above its tolerance."""
