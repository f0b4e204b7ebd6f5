"""Handwritten glyph recognition with DenseNet-style networks written in numpy."""

from densocr.errors import BackwardError, DataError, FormatError, NonFiniteError, OCRError, ShapeError

__version__ = "0.1.0"

__all__ = ["BackwardError", "DataError", "FormatError", "NonFiniteError", "OCRError", "ShapeError", "__version__"]
