"""Datasets: manifest import, a packed single-file container, synthetic glyphs."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from densocr.errors import DataError, FormatError
from densocr.imageproc import as_gray, clean_image, read_pgm


@dataclass
class Dataset:
    images: list[np.ndarray]
    labels: np.ndarray
    class_names: list[str]
    provenance: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.class_names = [str(c) for c in self.class_names]
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("class names must be unique")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset([self.images[i] for i in idx], self.labels[idx], list(self.class_names), self.provenance)

    def dims(self) -> list[tuple[int, int]]:
        return [im.shape for im in self.images]

    def cleaned(self, side: int, dilate: bool = False, median: bool = False,
                ensure_bright_foreground: bool = True) -> np.ndarray:
        """Stack of preprocessed 8-bit images, shape (N, side, side)."""
        if not len(self):
            return np.zeros((0, side, side), dtype=np.uint8)
        return np.stack([clean_image(im, side, dilate, median, ensure_bright_foreground) for im in self.images])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.provenance == other.provenance
            and np.array_equal(self.labels, other.labels)
            and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.images, other.images))
        )


# ------------------------------------------------------------------ manifest


@dataclass
class Manifest:
    base_dir: Path
    rows: list[tuple[str, str]] = field(default_factory=list)


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise DataError(f"{path}: first row must be the header 'path,label'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected 2")
            rows.append((row[0].strip(), row[1].strip()))
    if not rows:
        raise DataError(f"{path}: manifest has no rows")
    return Manifest(path.parent, rows)


def load_manifest(path) -> Dataset:
    """Read a ``path,label`` CSV of PGM images; classes are numbered by first appearance."""
    manifest = read_manifest(path)
    class_index: dict[str, int] = {}
    images, labels = [], []
    for lineno, (rel, label) in enumerate(manifest.rows, start=2):
        img_path = manifest.base_dir / rel
        if not img_path.is_file():
            raise DataError(f"{path}: row {lineno}: image {rel!r} not found")
        try:
            images.append(read_pgm(img_path))
        except FormatError as exc:
            raise DataError(f"{path}: row {lineno}: {exc}") from None
        labels.append(class_index.setdefault(label, len(class_index)))
    return Dataset(images, np.array(labels), list(class_index), provenance=str(path))


# ---------------------------------------------------------------------- pack

PACK_MAGIC = b"DOCRPACK"
PACK_VERSION = 1


def encode_pack(ds: Dataset) -> bytes:
    """Header (magic, version, counts, provenance, class names) then (h, w, label, pixels) per sample."""
    prov = ds.provenance.encode("utf-8")
    parts = [PACK_MAGIC, struct.pack("<IIII", PACK_VERSION, len(ds), ds.num_classes, len(prov)), prov]
    for name in ds.class_names:
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw]
    for img, label in zip(ds.images, ds.labels):
        img = as_gray(img)
        parts += [struct.pack("<III", img.shape[0], img.shape[1], int(label)), np.ascontiguousarray(img).tobytes()]
    return b"".join(parts)


def decode_pack(data: bytes) -> Dataset:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"pack truncated at offset {pos} while reading {what} (need {n} bytes)")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(PACK_MAGIC), "magic") != PACK_MAGIC:
        raise FormatError("not a dataset pack (bad magic)")
    version, count, n_classes, prov_len = struct.unpack("<IIII", take(16, "header"))
    if version != PACK_VERSION:
        raise FormatError(f"unsupported pack version {version} (this build reads version {PACK_VERSION})")
    provenance = take(prov_len, "provenance").decode("utf-8")
    names = []
    for i in range(n_classes):
        (n,) = struct.unpack("<H", take(2, f"class name {i} length"))
        names.append(take(n, f"class name {i}").decode("utf-8"))
    images, labels = [], []
    for i in range(count):
        h, w, label = struct.unpack("<III", take(12, f"sample {i} header"))
        images.append(np.frombuffer(take(h * w, f"sample {i} pixels"), dtype=np.uint8).reshape(h, w).copy())
        labels.append(label)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after sample {count - 1} at offset {pos}")
    try:
        return Dataset(images, np.array(labels, dtype=np.int64), names, provenance)
    except DataError as exc:
        raise FormatError(f"inconsistent pack contents: {exc}") from None


def pack(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_pack(ds))


def unpack(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file {path} does not exist")
    return decode_pack(path.read_bytes())


def load_dataset(path) -> Dataset:
    """Open a ``.csv`` manifest or a packed dataset."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_manifest(path)
    return unpack(path)


# ----------------------------------------------------------------- synthetic


def _arc(cx, cy, rx, ry, a0, a1, n=24):
    t = np.linspace(math.radians(a0), math.radians(a1), n)
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


# Strokes live in [-1, 1]^2 with y pointing down. Two styles per class.
GLYPH_TEMPLATES: list[list[list[list[tuple[float, float]]]]] = [
    [[_arc(0, 0, 0.6, 0.6, 0, 360)], [_arc(0, 0, 0.38, 0.7, 0, 360)]],
    [[[(0, -0.75), (0, 0.75)]], [[(-0.25, -0.5), (0, -0.75), (0, 0.75)]]],
    [[[(-0.7, 0), (0.7, 0)]], [[(-0.7, 0.1), (0.7, -0.1)], [(-0.7, 0.1), (-0.7, -0.15)]]],
    [[[(-0.6, -0.6), (0.6, 0.6)], [(0.6, -0.6), (-0.6, 0.6)]],
     [[(-0.45, -0.7), (0.45, 0.7)], [(0.45, -0.7), (-0.45, 0.7)]]],
    [[[(0, -0.7), (0, 0.7)], [(-0.7, 0), (0.7, 0)]], [[(0, -0.7), (0, 0.7)], [(-0.7, -0.2), (0.7, -0.2)]]],
    [[[(0, -0.7), (0.65, 0.55), (-0.65, 0.55), (0, -0.7)]], [[(0, -0.6), (0.7, 0.6), (-0.7, 0.6), (0, -0.6)]]],
    [[[(-0.55, -0.55), (0.55, -0.55), (0.55, 0.55), (-0.55, 0.55), (-0.55, -0.55)]],
     [[(-0.45, -0.65), (0.45, -0.65), (0.45, 0.65), (-0.45, 0.65), (-0.45, -0.65)]]],
    [[[(-0.6, -0.65), (0, 0.65), (0.6, -0.65)]], [[(-0.55, -0.7)] + _arc(0, 0.1, 0.55, 0.55, 180, 0) + [(0.55, -0.7)]]],
    [[[(-0.65, -0.3), (0.65, -0.3)], [(-0.65, 0.3), (0.65, 0.3)]],
     [[(-0.65, -0.45), (0.65, -0.45)], [(-0.65, 0), (0.65, 0)], [(-0.65, 0.45), (0.65, 0.45)]]],
    [[_arc(0, -0.35, 0.35, 0.35, -30, -270) + _arc(0, 0.35, 0.35, 0.35, -90, 210)],
     [[(-0.6, -0.6), (0.6, -0.6), (-0.6, 0.6), (0.6, 0.6)]]],
]


def _procedural_templates(cls: int) -> list:
    rng = np.random.default_rng(10_000 + cls)
    styles = []
    for _ in range(2):
        strokes = []
        for _ in range(int(rng.integers(2, 4))):
            pts = rng.uniform(-0.7, 0.7, size=(int(rng.integers(2, 4)), 2))
            strokes.append([tuple(p) for p in pts])
        styles.append(strokes)
    return styles


def glyph_templates(cls: int) -> list:
    return GLYPH_TEMPLATES[cls] if cls < len(GLYPH_TEMPLATES) else _procedural_templates(cls)


def _segments(strokes) -> np.ndarray:
    segs = []
    for stroke in strokes:
        pts = np.asarray(stroke, dtype=np.float64)
        segs.extend(np.stack([pts[:-1], pts[1:]], axis=1))
    return np.asarray(segs).reshape(-1, 2, 2)


def render_strokes(segments: np.ndarray, side: int, thickness: float) -> np.ndarray:
    """Binary ink mask of the given pixel-space segments (x, y) with stroke ``thickness``."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    best = np.full(len(pts), np.inf)
    for a, b in segments:
        ab = b - a
        denom = float(ab @ ab)
        t = np.zeros(len(pts)) if denom == 0 else np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
        d = np.hypot(*(pts - a - t[:, None] * ab).T)
        np.minimum(best, d, out=best)
    return (best <= thickness / 2.0).reshape(side, side)


def _place(segs: np.ndarray, side: int, angle_deg: float, shift, box=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Map template coordinates into pixels: rotate about the glyph box centre, scale, shift."""
    bx, by, bscale = box
    t = math.radians(angle_deg)
    rot = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    p = segs.reshape(-1, 2) * bscale + np.array([bx, by])
    p = p @ rot.T
    half = (side - 1) / 2.0
    p = p * (side * 0.42) + half + np.array([shift[1], shift[0]])
    return p.reshape(-1, 2, 2)


def synth_glyphs(
    n_classes: int,
    n_per_class: int,
    side: int = 64,
    noise: float = 0.02,
    seed: int = 0,
    max_rotation: float = 10.0,
    max_shift: int | None = None,
    thickness_jitter: float = 0.3,
    mode: str = "glyph",
) -> Dataset:
    """Deterministic, class-balanced synthetic handwriting.

    Each class has two stroke styles used alternately. Every sample gets a
    random rotation in [-max_rotation, max_rotation] degrees, an integer shift
    of up to ``max_shift`` pixels per axis (default ``side // 16``), a stroke
    thickness jittered by up to ``thickness_jitter`` (relative), and
    salt-and-pepper noise flipping each pixel with probability ``noise``.
    Images are dark ink on a white background.

    ``mode="word"`` makes each class a fixed sequence of 2-4 glyphs laid out
    left to right.
    """
    if side < 16:
        raise DataError(f"side {side} is too small for the glyph templates (minimum 16)")
    if n_classes < 1 or n_per_class < 0:
        raise DataError("n_classes must be positive and n_per_class nonnegative")
    if not 0.0 <= noise <= 1.0:
        raise DataError(f"noise must lie in [0, 1], got {noise}")
    if mode not in ("glyph", "word"):
        raise DataError(f"unknown synth mode {mode!r}")
    max_shift = side // 16 if max_shift is None else max_shift
    rng = np.random.default_rng(seed)

    if mode == "glyph":
        class_names = [str(c) for c in range(n_classes)]
        layouts = [[(c, (0.0, 0.0, 1.0))] for c in range(n_classes)]
    else:
        word_rng = np.random.default_rng(20_000 + seed)
        seen, layouts, class_names = set(), [], []
        while len(layouts) < n_classes:
            length = int(word_rng.integers(2, 5))
            seq = tuple(int(v) for v in word_rng.integers(0, len(GLYPH_TEMPLATES), size=length))
            if seq in seen:
                continue
            seen.add(seq)
            width = 2.0 / length
            layouts.append([(g, (-1.0 + width * (i + 0.5), 0.0, width / 2.0)) for i, g in enumerate(seq)])
            class_names.append("w" + "-".join(map(str, seq)))

    base_thickness = max(1.5, side / 20.0)
    images, labels = [], []
    for cls in range(n_classes):
        for i in range(n_per_class):
            style = i % 2
            angle = rng.uniform(-max_rotation, max_rotation)
            shift = rng.integers(-max_shift, max_shift + 1, size=2)
            thick = base_thickness * (1.0 + rng.uniform(-thickness_jitter, thickness_jitter))
            segs = []
            for glyph, box in layouts[cls]:
                local = _segments(glyph_templates(glyph)[style])
                segs.append(_place(local, side, angle, shift, box))
            ink = render_strokes(np.concatenate(segs), side, thick * (1.0 if mode == "glyph" else 0.7))
            img = np.where(ink, 0, 255).astype(np.uint8)
            if noise > 0:
                flip = rng.random(img.shape) < noise
                salt = rng.random(img.shape) < 0.5
                img[flip] = np.where(salt[flip], 255, 0)
            images.append(img)
            labels.append(cls)
    prov = f"synth_glyphs(n_classes={n_classes}, n_per_class={n_per_class}, side={side}, noise={noise}, seed={seed}, mode={mode})"
    return Dataset(images, np.array(labels, dtype=np.int64), class_names, prov)
