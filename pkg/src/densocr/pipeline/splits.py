"""Train/validation/test splits and stratified k-fold partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from densocr.errors import DataError


def derive_seed(seed: int, *path: int) -> int:
    """A 32-bit seed derived from ``seed`` and an integer path (e.g. fold index)."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1)[0])


def allocate(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items to the given fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    raw = fr * n
    counts = np.floor(raw + 1e-9).astype(int)
    short = n - counts.sum()
    order = sorted(range(len(fr)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


def _check_fractions(fractions) -> tuple[float, ...]:
    fr = tuple(float(f) for f in fractions)
    if not fr or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fr}")
    return fr


@dataclass
class SplitPlan:
    fractions: tuple[float, ...]
    stratified: bool
    seed: int
    parts: list[np.ndarray]

    @property
    def train(self) -> np.ndarray:
        return self.parts[0]

    @property
    def val(self) -> np.ndarray:
        return self.parts[1] if len(self.parts) > 1 else np.zeros(0, dtype=np.int64)

    @property
    def test(self) -> np.ndarray:
        return self.parts[2] if len(self.parts) > 2 else np.zeros(0, dtype=np.int64)

    def sizes(self) -> list[int]:
        return [len(p) for p in self.parts]

    def to_dict(self) -> dict:
        return {"fractions": list(self.fractions), "stratified": self.stratified, "seed": self.seed,
                "sizes": self.sizes()}


def _stratified_counts(class_sizes, fractions) -> np.ndarray:
    """Per-class part sizes: each is floor or ceil of its share, part totals hit ``allocate``.

    The leftover units after flooring are routed with augmenting paths
    (source -> class -> part -> sink), a class reaching a part only where its
    share has a fractional remainder. Such a rounding always exists, and a
    plain greedy pass can paint itself into a corner.
    """
    fr = np.asarray(fractions)
    sizes = np.asarray(class_sizes, dtype=np.int64)
    targets = np.asarray(allocate(int(sizes.sum()), fr))
    raw = np.outer(sizes, fr)
    counts = np.floor(raw + 1e-9).astype(np.int64)
    frac = raw - counts
    extra = sizes - counts.sum(axis=1)
    demand = targets - counts.sum(axis=0)
    ncls, nparts = counts.shape
    # larger remainders first so the result stays close to proportional
    edges = [sorted((p for p in range(nparts) if fr[p] > 0 and frac[c, p] > 1e-9), key=lambda p: (-frac[c, p], p))
             for c in range(ncls)]
    used = np.zeros_like(counts)

    def augment(c, seen) -> bool:
        for p in edges[c]:
            if used[c, p] or p in seen:
                continue
            seen.add(p)
            if demand[p] > 0:
                demand[p] -= 1
                used[c, p] = 1
                return True
            # reroute one unit already sent to p by another class
            for other in range(ncls):
                if used[other, p]:
                    used[other, p] = 0
                    if augment(other, seen):
                        used[c, p] = 1
                        return True
                    used[other, p] = 1
        return False

    for c in range(ncls):
        for _ in range(int(extra[c])):
            if not augment(c, set()):
                raise RuntimeError("no stratified rounding found")  # unreachable: one always exists
    return counts + used


def split(labels, fractions=(0.6, 0.2, 0.2), stratified: bool = True, seed: int = 0) -> SplitPlan:
    """Partition sample indices into parts sized by ``fractions``.

    Stratified splits give every class floor or ceil of its proportional share
    in each part while keeping part totals at their overall apportionment.
    """
    labels = np.asarray(labels.labels if hasattr(labels, "labels") else labels, dtype=np.int64)
    fr = _check_fractions(fractions)
    rng = np.random.default_rng(seed)
    n = len(labels)
    if not stratified:
        perm = rng.permutation(n)
        bounds = np.cumsum([0] + allocate(n, fr))
        parts = [np.sort(perm[bounds[i] : bounds[i + 1]]) for i in range(len(fr))]
        return SplitPlan(fr, False, seed, parts)

    classes = np.unique(labels)
    active = sum(1 for f in fr if f > 0)
    groups = [np.flatnonzero(labels == c) for c in classes]
    for c, g in zip(classes, groups):
        if len(g) < active:
            raise DataError(f"class {c} has {len(g)} samples, fewer than the {active} parts of a stratified split")
    counts = _stratified_counts([len(g) for g in groups], fr)
    parts: list[list[int]] = [[] for _ in fr]
    for g, row in zip(groups, counts):
        perm = rng.permutation(g)
        start = 0
        for p, k in enumerate(row):
            parts[p].extend(perm[start : start + k])
            start += k
    return SplitPlan(fr, True, seed, [np.sort(np.asarray(p, dtype=np.int64)) for p in parts])


def stratified_folds(labels, k: int, seed: int = 0) -> list[np.ndarray]:
    """``k`` disjoint folds covering every index; per class, fold sizes differ by at most one.

    Each class is shuffled and dealt round-robin, continuing from the fold where
    the previous class stopped so that fold totals also stay within one.
    """
    labels = np.asarray(labels.labels if hasattr(labels, "labels") else labels, dtype=np.int64)
    n = len(labels)
    if k < 2:
        raise ValueError(f"k-fold needs k >= 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the dataset size {n}")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for c in np.unique(labels):
        for idx in rng.permutation(np.flatnonzero(labels == c)):
            folds[cursor].append(int(idx))
            cursor = (cursor + 1) % k
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
