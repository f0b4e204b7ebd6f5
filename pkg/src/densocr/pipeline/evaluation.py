"""Accuracy, confusion matrices and the k-fold protocol."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from densocr.augment import AugmentPolicy, tta_predict_batch
from densocr.errors import DataError
from densocr.pipeline.splits import derive_seed, stratified_folds
from densocr.pipeline.training import Prepared, TrainConfig, prepare, train


def round_half_up(value: float, places: int = 2) -> float:
    """Decimal rounding of the shortest repr, so 98.325 -> 98.33 (never binary-float surprises)."""
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


@dataclass
class ConfusionMatrix:
    """Counts with rows indexed by true class and columns by predicted class."""

    counts: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape[1] != k:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if not self.class_names:
            self.class_names = [str(i) for i in range(k)]

    @classmethod
    def from_predictions(cls, labels, preds, num_classes: int, class_names=None) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
        return cls(counts, list(class_names or []))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        """Percent correct: 100 * trace / total."""
        if self.total == 0:
            raise DataError("accuracy of an empty confusion matrix is undefined")
        return 100.0 * int(np.trace(self.counts)) / self.total

    def one_vs_rest(self) -> list[dict]:
        """Per class: TP, FP, FN, TN and the binary accuracy (TP+TN)/(TP+FP+FN+TN) in percent."""
        total = self.total
        rows = []
        for c in range(self.num_classes):
            tp = int(self.counts[c, c])
            fn = int(self.counts[c].sum()) - tp
            fp = int(self.counts[:, c].sum()) - tp
            tn = total - tp - fn - fp
            rows.append({"class": self.class_names[c], "tp": tp, "fp": fp, "fn": fn, "tn": tn,
                         "accuracy": 100.0 * (tp + tn) / total if total else 0.0})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("true\\pred," + ",".join(self.class_names) + "\n")
        for name, row in zip(self.class_names, self.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(np.asarray(d["counts"], dtype=np.int64).reshape(len(d["class_names"]), -1), list(d["class_names"]))

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and self.class_names == other.class_names
                and np.array_equal(self.counts, other.counts))


@dataclass
class EvalResult:
    accuracy: float
    confusion: ConfusionMatrix
    predictions: np.ndarray
    probabilities: np.ndarray

    def __iter__(self):
        # allows ``acc, cm = evaluate(...)``
        return iter((self.accuracy, self.confusion))


def first_argmax(probs: np.ndarray) -> np.ndarray:
    """Row argmax; ties go to the lowest class index (numpy's documented behaviour)."""
    return np.argmax(probs, axis=1)


def predict_probabilities(model, data: Prepared, tta_views: int = 1, tta_policy: AugmentPolicy | None = None,
                          seed: int = 0, batch_size: int = 128) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return tta_predict_batch(model, data.images, tta_views, tta_policy, rng, batch_size)


def evaluate(model, dataset, tta_views: int = 1, tta_policy: AugmentPolicy | None = None, seed: int = 0,
             config: TrainConfig | None = None, batch_size: int = 128) -> EvalResult:
    """Accuracy in percent and confusion matrix; ``tta_views > 1`` averages augmented views."""
    if dataset is None or len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    data = prepare(dataset, model.config.input_side, config)
    k = model.config.num_classes
    if data.labels.min() < 0 or data.labels.max() >= k:
        raise DataError(f"labels fall outside the model's {k} classes")
    if tta_views > 1 and tta_policy is None:
        tta_policy = AugmentPolicy.digit_char()
    probs = predict_probabilities(model, data, tta_views, tta_policy, seed, batch_size)
    preds = first_argmax(probs)
    names = data.class_names if len(data.class_names) == k else None
    cm = ConfusionMatrix.from_predictions(data.labels, preds, k, names)
    return EvalResult(cm.accuracy, cm, preds, probs)


@dataclass
class FoldReport:
    k: int
    accuracies: list[float]
    confusions: list[ConfusionMatrix] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        self.accuracies = [float(a) for a in self.accuracies]
        if len(self.accuracies) != self.k:
            raise ValueError(f"expected {self.k} fold accuracies, got {len(self.accuracies)}")
        if self.confusions and len(self.confusions) != self.k:
            raise ValueError("need one confusion matrix per fold")

    @classmethod
    def from_accuracies(cls, accuracies, label: str = "") -> "FoldReport":
        return cls(len(accuracies), list(accuracies), [], label)

    @property
    def mean_raw(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean(self) -> float:
        return round_half_up(self.mean_raw, 2)

    def to_dict(self) -> dict:
        return {"k": self.k, "label": self.label, "fold_accuracies": list(self.accuracies),
                "mean_accuracy": self.mean, "mean_accuracy_unrounded": self.mean_raw,
                "confusions": [c.to_dict() for c in self.confusions]}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        return cls(d["k"], list(d["fold_accuracies"]), [ConfusionMatrix.from_dict(c) for c in d["confusions"]],
                   d.get("label", ""))

    def __eq__(self, other) -> bool:
        return (isinstance(other, FoldReport) and self.k == other.k and self.accuracies == other.accuracies
                and self.confusions == other.confusions)


@dataclass
class FoldOutcome:
    fold: int
    test_indices: np.ndarray
    history: list
    result: EvalResult


def kfold_run(dataset, k: int, model_config, train_config: TrainConfig | None = None, tta: bool = False,
              tta_views: int | None = None, seed: int = 0, progress=None, outcomes: list | None = None) -> FoldReport:
    """Train a fresh model on k-1 folds and test on the held-out fold, k times.

    Fold ``i`` builds its model with seed ``derive_seed(seed, i, 0)`` and
    trains/augments with ``derive_seed(seed, i, 1)``, so runs are reproducible
    and no state leaks between folds.
    """
    from densocr.models import build_model

    cfg = train_config or TrainConfig()
    data = prepare(dataset, model_config.input_side, cfg)
    folds = stratified_folds(data.labels, k, seed)
    n = len(data)
    views = (tta_views or cfg.tta_views) if tta else 1
    policy = cfg.tta_policy or AugmentPolicy.digit_char()
    accs, cms = [], []
    for i, test_idx in enumerate(folds):
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        model = build_model(model_config.replace(seed=derive_seed(seed, i, 0)))
        fold_cfg = cfg.replace(seed=derive_seed(seed, i, 1))
        res = train(model, data.subset(np.flatnonzero(mask)), None, fold_cfg)
        ev = evaluate(model, data.subset(test_idx), views, policy, seed=derive_seed(seed, i, 2))
        accs.append(ev.accuracy)
        cms.append(ev.confusion)
        if outcomes is not None:
            outcomes.append(FoldOutcome(i + 1, test_idx, res.history, ev))
        if progress is not None:
            progress(i + 1, ev.accuracy)
    return FoldReport(k, accs, cms, label=f"{model_config.name}{' +TTA' if tta else ''}")
