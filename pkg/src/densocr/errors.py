"""Exception types shared across the package."""


class OCRError(Exception):
    """Base class for all package errors."""


class ShapeError(OCRError, ValueError):
    """Tensor or parameter shapes do not line up."""


class NonFiniteError(OCRError, ArithmeticError):
    """A NaN or infinity escaped a numeric operation."""


class BackwardError(OCRError, RuntimeError):
    """``backward`` was called without a cached forward pass."""


class DataError(OCRError, ValueError):
    """Malformed, missing or inconsistent input data."""


class FormatError(DataError):
    """A binary container (checkpoint, pack, PGM) could not be decoded."""
