"""Exception types shared across the package."""


class CataError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigError(CataError, ValueError):
    """Invalid hyperparameter or configuration value."""


class DimensionError(CataError, ValueError):
    """Two vectors (or a vector and a model) disagree on dimension."""


class NonFiniteError(CataError, ValueError):
    """An operation produced or received NaN/Inf."""


class DataError(CataError, ValueError):
    """Malformed, empty, or inconsistent dataset."""


class FormatError(CataError, ValueError):
    """A serialized file does not follow its declared format."""


class ConvergenceError(CataError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
