"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file or key is missing, malformed or inconsistent."""


class CsvFormatError(ValueError):
    """A data file does not follow the expected CSV layout."""


class DataQualityError(ValueError):
    """Measured data violate a precondition (too many outliers, bad bracket...)."""


class FieldSingularityError(ValueError):
    """Field requested too close to the coil conductor."""


class QuadratureError(RuntimeError):
    """A numerical integration failed to reach the requested tolerance."""


class FitError(RuntimeError):
    """A least-squares fit could not be carried out."""


class FitNonConvergenceError(FitError):
    """No optimizer start satisfied the convergence criteria."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
