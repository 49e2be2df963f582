"""Exception types shared across the package.

The CLI maps these onto exit codes: input/format problems exit 2,
shape/config problems exit 3, numeric divergence exits 4.
"""


class QuantflowError(Exception):
    """Base class for all package errors."""


class FeatureFormatError(QuantflowError, ValueError):
    """A feature/model/score file violates its binary format."""


class BadMagicError(FeatureFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FeatureFormatError):
    """File declares a format version this code does not read."""


class TruncatedPayloadError(FeatureFormatError):
    """File ends before the payload declared in the header."""


class NonFiniteValueError(FeatureFormatError):
    """Data contains NaN or infinity."""


class DimensionError(FeatureFormatError):
    """Feature dimension is odd or below the minimum of 2."""


class ShapeMismatchError(QuantflowError, ValueError):
    """Array shapes disagree with the model or with each other."""


class ConfigError(QuantflowError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DivergenceError(QuantflowError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class MissingCacheError(QuantflowError, RuntimeError):
    """backward() was called without a matching cached forward pass."""
