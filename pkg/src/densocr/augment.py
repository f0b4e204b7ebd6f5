"""Random image augmentation for training and test-time prediction averaging."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from densocr.imageproc import as_gray, gaussian_filter, median_filter, quantize, resize_inter_area

FILTER_OPS = ("median", "gaussian")


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "digit_char"
    max_rotation_deg: float = 10.0
    max_shift_px: int = 3
    scale_range: tuple[float, float] = (1.0, 1.0)
    allow_hflip: bool = False
    filter_ops: tuple[str, ...] = FILTER_OPS
    gaussian_sigma: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        object.__setattr__(self, "filter_ops", tuple(self.filter_ops))
        if self.kind not in ("digit_char", "word"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        lo, hi = self.scale_range
        if not lo <= 1.0 <= hi or lo <= 0:
            raise ValueError(f"scale_range must bracket 1, got {self.scale_range}")
        if self.max_rotation_deg < 0 or self.max_shift_px < 0:
            raise ValueError("augmentation magnitudes must be nonnegative")
        if self.kind == "digit_char":
            if self.allow_hflip:
                raise ValueError("digit/char policies never flip: glyph identity depends on chirality")
            if self.scale_range != (1.0, 1.0):
                raise ValueError("scale jitter belongs to word policies only")
        elif self.filter_ops:
            raise ValueError("filter ops belong to digit/char policies only")
        unknown = set(self.filter_ops) - set(FILTER_OPS)
        if unknown:
            raise ValueError(f"unknown filter ops {sorted(unknown)}")

    @classmethod
    def digit_char(cls, **kw) -> "AugmentPolicy":
        return cls(kind="digit_char", **kw)

    @classmethod
    def word(cls, **kw) -> "AugmentPolicy":
        kw.setdefault("scale_range", (0.9, 1.1))
        kw.setdefault("allow_hflip", True)
        kw.setdefault("filter_ops", ())
        return cls(kind="word", **kw)

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(kind="digit_char", max_rotation_deg=0.0, max_shift_px=0, filter_ops=())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scale_range"] = list(self.scale_range)
        d["filter_ops"] = list(self.filter_ops)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        return cls(**d)


def background_level(img: np.ndarray) -> int:
    border = np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])
    return int(np.median(border))


def warp_affine(img, angle_deg: float = 0.0, shift=(0, 0), scale: float = 1.0, fill: int | None = None) -> np.ndarray:
    """Rotate counterclockwise about the centre, scale, then shift by (dy, dx) pixels.

    Output pixels are bilinear samples of the source; samples falling outside
    the source take the ``fill`` intensity (the border median by default).
    """
    img = as_gray(img)
    h, w = img.shape
    fill = background_level(img) if fill is None else int(fill)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ry = (yy - cy - shift[0]) / scale
    rx = (xx - cx - shift[1]) / scale
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    src_x = np.round(c * rx - s * ry + cx, 9)
    src_y = np.round(s * rx + c * ry + cy, 9)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx, fy = src_x - x0, src_y - y0
    padded = np.pad(img.astype(np.float64), 1, constant_values=float(fill))

    def sample(yi, xi):
        inside = (yi >= -1) & (yi <= h) & (xi >= -1) & (xi <= w)
        vals = padded[np.clip(yi + 1, 0, h + 1), np.clip(xi + 1, 0, w + 1)]
        return np.where(inside, vals, float(fill))

    out = ((1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1))
           + fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1)))
    return quantize(out)


def apply_augment(img, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """One random augmentation of ``img``; the same rng state gives the same bytes.

    Draw order: rotation, shift (dy, dx), scale, flip, then one coin per filter op.
    """
    img = as_gray(img)
    angle = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg)
    dy, dx = rng.integers(-policy.max_shift_px, policy.max_shift_px + 1, size=2)
    lo, hi = policy.scale_range
    scale = rng.uniform(lo, hi)
    flip = policy.allow_hflip and rng.random() < 0.5
    use = [op for op in policy.filter_ops if rng.random() < 0.5]

    out = img
    if angle != 0.0 or dy != 0 or dx != 0 or scale != 1.0:
        out = warp_affine(out, angle, (int(dy), int(dx)), scale, fill=background_level(img))
    if flip:
        out = out[:, ::-1]
    for op in use:
        out = median_filter(out) if op == "median" else gaussian_filter(out, policy.gaussian_sigma)
    return np.ascontiguousarray(out)


def average_views(view_probs) -> np.ndarray:
    """Mean of per-view probability arrays, first view as the reference.

    Computed as ``p0 + sum(p_i - p0) / n`` and clipped to the per-class range
    of the views, so identical views reproduce ``p0`` exactly.
    """
    views = [np.asarray(p) for p in view_probs]
    if not views:
        raise ValueError("need at least one view")
    base = views[0]
    if len(views) == 1:
        return base.copy()
    acc = np.zeros_like(base)
    for p in views[1:]:
        acc += p - base
    stacked = np.stack(views)
    return np.clip(base + acc / len(views), stacked.min(axis=0), stacked.max(axis=0))


def tta_predict_batch(model, images, n: int, policy: AugmentPolicy | None, rng: np.random.Generator,
                      batch_size: int = 128) -> np.ndarray:
    """TTA probabilities for a stack of 8-bit images already at the model's input side.

    View 0 is always the unaugmented batch, so ``n == 1`` is plain prediction.
    """
    if n < 1:
        raise ValueError("TTA needs at least one view")
    images = np.asarray(images)
    dtype = model.dtype
    views = [model.predict_proba(_to_input(images, dtype), batch_size)]
    for _ in range(n - 1):
        if policy is None:
            aug = images
        else:
            aug = np.stack([apply_augment(im, policy, rng) for im in images]) if len(images) else images
        views.append(model.predict_proba(_to_input(aug, dtype), batch_size))
    return average_views(views)


def tta_predict(model, img, n: int = 8, policy: AugmentPolicy | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Average class probabilities over ``n`` views of one cleaned image (first view unaugmented)."""
    img = as_gray(img)
    side = model.config.input_side
    if img.shape != (side, side):
        img = resize_inter_area(img, side, side)
    rng = rng if rng is not None else np.random.default_rng(policy.seed if policy else 0)
    return tta_predict_batch(model, img[None], n, policy, rng)[0]


def _to_input(images: np.ndarray, dtype) -> np.ndarray:
    return (images.astype(dtype) / dtype.type(255.0))[:, None]
