"""Exception types raised across the package."""


class SolverFailure(RuntimeError):
    """A forward/adjoint solve could not be carried out.

    The parameter vector at which the failure happened is kept on ``u`` so
    callers can log or reproduce it.
    """

    def __init__(self, message, u=None, pivot=None):
        super().__init__(message)
        self.u = u
        self.pivot = pivot


class StagnationError(RuntimeError):
    """The optimizer stopped making progress before any stopping test passed."""

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class UndefinedIACTError(ValueError):
    """Autocorrelation time requested for a constant or too-short series."""


class UnsupportedDimensionError(ValueError):
    """Operation only defined for scalar parameters was given a vector."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
