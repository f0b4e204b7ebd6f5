"""Max-voting over several models' predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from densocr.augment import AugmentPolicy, tta_predict
from densocr.errors import DataError
from densocr.pipeline.evaluation import ConfusionMatrix, EvalResult, predict_probabilities
from densocr.pipeline.training import prepare


def max_vote(prob_rows) -> tuple[int, np.ndarray]:
    """Winner and vote tally for one sample given each member's probability row.

    Members vote for their argmax. The most-voted class wins; among tied
    classes the one with the larger summed probability wins, then the lower index.
    """
    probs = np.asarray(prob_rows, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("max_vote needs a (members, classes) array with at least one member")
    tally = np.bincount(np.argmax(probs, axis=1), minlength=probs.shape[1])
    tied = np.flatnonzero(tally == tally.max())
    if len(tied) == 1:
        return int(tied[0]), tally
    summed = probs[:, tied].sum(axis=0)
    return int(tied[np.argmax(summed)]), tally


def vote_batch(member_probs) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`max_vote` over samples; ``member_probs`` is (members, N, K)."""
    probs = np.asarray(member_probs, dtype=np.float64)
    m, n, k = probs.shape
    votes = np.argmax(probs, axis=2)
    tally = np.zeros((n, k), dtype=np.int64)
    for row in votes:
        tally[np.arange(n), row] += 1
    tied = tally == tally.max(axis=1, keepdims=True)
    summed = np.where(tied, probs.sum(axis=0), -np.inf)
    return np.argmax(summed, axis=1), tally


@dataclass
class EnsembleResult(EvalResult):
    member_accuracies: list[float] | None = None
    tallies: np.ndarray | None = None


def ensemble_predict(models, img, tta_views: int = 1, tta_policy: AugmentPolicy | None = None,
                     seed: int = 0) -> tuple[int, np.ndarray]:
    """Class index and vote tally for one cleaned 8-bit image."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    rows = []
    for m in models:
        rng = np.random.default_rng(seed)
        rows.append(tta_predict(m, img, tta_views, tta_policy, rng))
    return max_vote(rows)


def ensemble_evaluate(models, dataset, tta_views: int = 1, tta_policy: AugmentPolicy | None = None,
                      seed: int = 0, config=None) -> EnsembleResult:
    """Ensemble accuracy plus each member's own accuracy on the same images."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    if dataset is None or len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    k = models[0].config.num_classes
    if any(m.config.num_classes != k for m in models):
        raise ValueError("ensemble members disagree on the number of classes")
    if tta_views > 1 and tta_policy is None:
        tta_policy = AugmentPolicy.digit_char()
    member_probs, member_acc = [], []
    for m in models:
        data = prepare(dataset, m.config.input_side, config)
        p = predict_probabilities(m, data, tta_views, tta_policy, seed)
        member_probs.append(p)
        member_acc.append(100.0 * float(np.mean(np.argmax(p, axis=1) == data.labels)))
    preds, tally = vote_batch(member_probs)
    names = data.class_names if len(data.class_names) == k else None
    cm = ConfusionMatrix.from_predictions(data.labels, preds, k, names)
    return EnsembleResult(cm.accuracy, cm, preds, np.mean(member_probs, axis=0), member_acc, tally)
