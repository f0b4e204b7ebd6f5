"""Precision control and validation helpers for rank-4 float arrays.

Tensors are plain ``numpy.ndarray`` objects laid out as (N, C, H, W).
The element type is chosen once per process (or per ``with precision(...)``
block): float32 for training, float64 for gradient checking.
"""

from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from densocr.errors import NonFiniteError, ShapeError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


def _resolve(dtype) -> type:
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ValueError(f"unsupported precision {dtype!r}") from None
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    return dt


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = _resolve(dtype)


@contextlib.contextmanager
def precision(dtype) -> Iterator[type]:
    """Temporarily switch the default element type."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = _resolve(dtype)
    try:
        yield _default_dtype
    finally:
        _default_dtype = old


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite value produced by {where}")
    return x


def as_nchw(x, where: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{where}: expected rank-4 (N,C,H,W) array, got shape {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(_default_dtype)
    return x
