"""8-bit grayscale image operations used before images reach a network.

Images are 2-D ``uint8`` numpy arrays (0 = black, 255 = white). Windowed
operations replicate edge pixels; every quantization back to 8 bits rounds
half up.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from densocr.errors import FormatError
from densocr.nn.tensor import get_default_dtype

ALLOWED_SIDES = (32, 48, 64, 80, 96, 128)


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("image has zero size")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half up and clip to 8 bits. The 1e-9 nudge absorbs float error at exact .5 ties."""
    return np.clip(np.floor(values + 0.5 + 1e-9), 0, 255).astype(np.uint8)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[i, j] = overlap / scale
    return w


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
        j0 = int(math.floor(src))
        frac = src - j0
        j1 = min(j0 + 1, n_in - 1)
        w[i, j0] += 1.0 - frac
        w[i, j1] += frac
    return w


def resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) resampling matrix for one axis."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize dimensions must be positive, got {n_in} -> {n_out}")
    if n_out == n_in:
        return np.eye(n_in)
    if n_out < n_in:
        return _area_weights(n_in, n_out)
    return _bilinear_weights(n_in, n_out)


def resize_inter_area(img, out_h: int, out_w: int) -> np.ndarray:
    """Area-averaging downscale; bilinear on axes that grow.

    Each axis is resampled independently, so a downscale by an integer factor
    is an exact box average of the covered source block.
    """
    img = as_gray(img)
    h, w = img.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return img.copy()
    wy = resize_weights(h, out_h)
    wx = resize_weights(w, out_w)
    return quantize(wy @ img.astype(np.float64) @ wx.T)


def _edge_windows(img: np.ndarray, size: int) -> np.ndarray:
    r = size // 2
    padded = np.pad(img, r, mode="edge")
    return sliding_window_view(padded, (size, size))


def dilate(img, size: int = 3) -> np.ndarray:
    """Grayscale dilation with a ``size`` x ``size`` all-ones structuring element."""
    img = as_gray(img)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"structuring element size must be odd, got {size}")
    return _edge_windows(img, size).max(axis=(2, 3))


def median_filter(img, window: int = 3) -> np.ndarray:
    img = as_gray(img)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be a positive odd count, got {window}")
    h, w = img.shape
    flat = _edge_windows(img, window).reshape(h, w, window * window)
    k = (window * window) // 2
    return np.partition(flat, k, axis=-1)[..., k]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian sampled on integers in [-ceil(3 sigma), ceil(3 sigma)]."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(img, sigma: float) -> np.ndarray:
    img = as_gray(img)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(img.astype(np.float64), r, mode="edge")
    h, w = img.shape
    rows = sum(k[i] * padded[:, i : i + w] for i in range(len(k)))
    out = sum(k[i] * rows[i : i + h, :] for i in range(len(k)))
    # a convex combination cannot leave the input range
    return np.clip(quantize(out), img.min(), img.max())


@dataclass(frozen=True)
class SizeStats:
    count: int
    mean_h: float
    mean_w: float
    std_h: float
    std_w: float
    min_h: int
    min_w: int
    max_h: int
    max_w: int
    recommended_side: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_size_stats(dims) -> SizeStats:
    """Summarize image dimensions and suggest a square working side.

    The suggestion is the smallest of 32, 48, 64, 80, 96, 128 that reaches
    ``max(mean_h, mean_w) + max(std_h, std_w)`` (128 if none does). It is
    advisory; pipelines take their side from configuration.
    """
    arr = np.asarray(list(dims), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("compute_size_stats needs at least one (h, w) pair")
    arr = arr.reshape(-1, 2)
    mean_h, mean_w = arr.mean(axis=0)
    std_h, std_w = arr.std(axis=0)
    target = max(mean_h, mean_w) + max(std_h, std_w)
    side = next((s for s in ALLOWED_SIDES if s >= target - 1e-9), ALLOWED_SIDES[-1])
    return SizeStats(
        count=len(arr), mean_h=float(mean_h), mean_w=float(mean_w), std_h=float(std_h), std_w=float(std_w),
        min_h=int(arr[:, 0].min()), min_w=int(arr[:, 1].min()), max_h=int(arr[:, 0].max()),
        max_w=int(arr[:, 1].max()), recommended_side=side,
    )


def normalize_polarity(img) -> np.ndarray:
    """Invert images whose mean exceeds 127 so that ink ends up bright."""
    img = as_gray(img)
    return 255 - img if img.mean() > 127 else img.copy()


def clean_image(img, target_side: int, dilate_ink: bool = False, median: bool = False,
                ensure_bright_foreground: bool = True) -> np.ndarray:
    """The 8-bit part of :func:`preprocess`: polarity, dilation, median, resize."""
    out = as_gray(img)
    if ensure_bright_foreground:
        out = normalize_polarity(out)
    if dilate_ink:
        out = dilate(out)
    if median:
        out = median_filter(out)
    return resize_inter_area(out, target_side, target_side)


def to_unit(img: np.ndarray, dtype=None) -> np.ndarray:
    dtype = dtype or get_default_dtype()
    return (np.asarray(img, dtype=dtype) / dtype(255.0)).reshape(1, 1, *img.shape)


def preprocess(img, target_side: int, dilate: bool = False, median: bool = False,
               ensure_bright_foreground: bool = True) -> np.ndarray:
    """Polarity -> dilation -> median -> resize -> scale to [0, 1]; returns (1, 1, side, side)."""
    return to_unit(clean_image(img, target_side, dilate, median, ensure_bright_foreground))


# ------------------------------------------------------------------------ PGM

_PGM_HEADER = re.compile(rb"\AP5(?:\s+|#[^\n]*\n)*?(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def decode_pgm(data: bytes) -> np.ndarray:
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError("not a binary (P5) PGM image")
    w, h, maxval = (int(g) for g in m.groups())
    if w < 1 or h < 1:
        raise FormatError(f"PGM has zero size {w}x{h}")
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    payload = data[m.end() : m.end() + w * h]
    if len(payload) < w * h:
        raise FormatError(f"PGM truncated: expected {w * h} pixel bytes, found {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    if maxval != 255:
        img = quantize(img.astype(np.float64) * (255.0 / maxval))
    return img.copy()


def encode_pgm(img) -> bytes:
    img = as_gray(img)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, img) -> None:
    Path(path).write_bytes(encode_pgm(img))
