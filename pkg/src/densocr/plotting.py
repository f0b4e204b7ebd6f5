"""Figures for results: confusion heatmaps, training curves, per-fold bars.

Uses the non-interactive Agg backend so it works headless.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps PNG bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _draw_confusion(ax, counts, names, title=""):
    counts = np.asarray(counts)
    k = counts.shape[0]
    ax.imshow(counts, cmap="Blues", interpolation="nearest")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xticklabels(names, rotation=90 if k > 12 else 0)
    ax.set_yticklabels(names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    if k <= 20:
        hi = counts.max() if counts.size else 0
        for i in range(k):
            for j in range(k):
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", fontsize=7,
                        color="white" if hi and counts[i, j] > hi / 2 else "black")


def plot_confusion(cm, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        side = max(3.0, 0.45 * cm.num_classes + 1.5)
        fig, ax = plt.subplots(figsize=(side, side))
        _draw_confusion(ax, cm.counts, cm.class_names, title)
        return _save(fig, path)


def plot_confusion_grid(cms, path, titles=None) -> Path:
    """One panel per confusion matrix (e.g. one per fold)."""
    n = len(cms)
    if n == 0:
        raise ValueError("no confusion matrices to plot")
    cols = min(5, n)
    rows = math.ceil(n / cols)
    titles = titles or [f"fold {i + 1}" for i in range(n)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.2 * rows), squeeze=False)
        for ax in axes.flat[n:]:
            ax.axis("off")
        for ax, cm, t in zip(axes.flat, cms, titles):
            _draw_confusion(ax, cm.counts, cm.class_names, t)
        return _save(fig, path)


def plot_history(history, path) -> Path:
    rows = [h.to_dict() if hasattr(h, "to_dict") else dict(h) for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if rows:
            ep = [r["epoch"] for r in rows]
            ax.plot(ep, [r["train_loss"] for r in rows], marker="o", color="C0", label="train loss")
            ax.set_xlabel("epoch")
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
            ax.set_ylabel("train loss")
            val = [r["val_accuracy"] for r in rows]
            if any(v is not None for v in val):
                ax2 = ax.twinx()
                ax2.plot(ep, [np.nan if v is None else v for v in val], marker="s", color="C1")
                ax2.set_ylabel("val accuracy (%)", color="C1")
        else:
            ax.text(0.5, 0.5, "no epochs", ha="center", va="center", transform=ax.transAxes)
        return _save(fig, path)


def plot_folds(report, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        x = np.arange(1, report.k + 1)
        ax.bar(x, report.accuracies, color="C0")
        ax.axhline(report.mean_raw, color="C3", lw=1, ls="--", label=f"mean {report.mean:.2f}")
        lo = min(report.accuracies)
        ax.set_ylim(max(0.0, lo - 5), 100.5)
        ax.set_xticks(x)
        ax.set_xlabel("fold")
        ax.set_ylabel("accuracy (%)")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_montage(images, path, labels=None, cols: int = 10) -> Path:
    """Grid of 8-bit images, handy for eyeballing synthetic data."""
    n = len(images)
    cols = max(1, min(cols, n))
    rows = max(1, math.ceil(n / cols))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.9, rows * 0.9), squeeze=False)
        for ax in axes.flat:
            ax.axis("off")
        for i, (ax, img) in enumerate(zip(axes.flat, images)):
            ax.imshow(img, cmap="gray", vmin=0, vmax=255)
            if labels is not None:
                ax.set_title(str(labels[i]), fontsize=7)
        return _save(fig, path)
