"""Exception hierarchy shared by every module."""


class DecayLabError(Exception):
    pass


class ParameterError(DecayLabError, ValueError):
    """Invalid or out-of-domain input."""


class ConvergenceError(DecayLabError, RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


class FitError(DecayLabError, ValueError):
    """A regime fit could not be performed on the given data."""
