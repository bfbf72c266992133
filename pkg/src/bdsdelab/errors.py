"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad structural input: degenerate grid, unknown preset, invalid constants."""


class UnsupportedConfigurationError(ConfigurationError):
    """Operation not available for the given generator/domain combination."""


class NumericalFailureError(RuntimeError):
    """Numerical breakdown: NaN, non-convergence, violated ellipticity, all paths dead."""


class NonConvergenceError(NumericalFailureError):
    """Iteration budget exhausted before the tolerance was met.

    Carries the iteration log so callers can inspect the decay history.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []
