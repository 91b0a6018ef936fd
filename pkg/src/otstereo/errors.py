"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not follow the expected on-disk layout."""


class ValidationError(ValueError):
    """Data is well-formed but violates a value constraint (NaN, shape, range)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped with a residual above its tolerance."""
