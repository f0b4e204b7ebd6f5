"""Mini-batch training loop."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from densocr.augment import AugmentPolicy, apply_augment
from densocr.errors import DataError, NonFiniteError
from densocr.nn.functional import softmax_cross_entropy
from densocr.nn.layers import Dropout
from densocr.optim import Optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    dropout_keep: float | None = None
    optimizer: str = "sgd"
    momentum: float = 0.0
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.1
    augment: AugmentPolicy | None = None
    seed: int = 0
    eval_tta: bool = False
    tta_views: int = 8
    tta_policy: AugmentPolicy | None = None
    dilate: bool = False
    median: bool = False
    ensure_bright_foreground: bool = True

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentPolicy.from_dict(self.augment)
        if isinstance(self.tta_policy, dict):
            self.tta_policy = AugmentPolicy.from_dict(self.tta_policy)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dropout_keep is not None and not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must lie in (0, 1]")
        if self.tta_views < 1:
            raise ValueError("tta_views must be >= 1")

    def make_optimizer(self) -> Optimizer:
        return Optimizer(kind=self.optimizer, learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                         momentum=self.momentum, lr_decay_every=self.lr_decay_every,
                         lr_decay_factor=self.lr_decay_factor)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["augment"] = self.augment.to_dict() if self.augment else None
        d["tta_policy"] = self.tta_policy.to_dict() if self.tta_policy else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Prepared:
    """Cleaned 8-bit images at the working side plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Prepared":
        idx = np.asarray(idx, dtype=np.int64)
        return Prepared(self.images[idx], self.labels[idx], self.class_names)


def prepare(dataset, side: int, config: TrainConfig | None = None) -> Prepared:
    if isinstance(dataset, Prepared):
        return dataset
    cfg = config or TrainConfig()
    imgs = dataset.cleaned(side, cfg.dilate, cfg.median, cfg.ensure_bright_foreground)
    return Prepared(imgs, dataset.labels.copy(), list(dataset.class_names))


def to_input(images: np.ndarray, dtype) -> np.ndarray:
    dtype = np.dtype(dtype)
    return (images.astype(dtype) / dtype.type(255.0))[:, None]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float | None
    learning_rate: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    model: object
    history: list[EpochRecord]
    best_state: dict | None = None
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    optimizer: Optimizer | None = None


def set_dropout_keep(model, keep: float) -> None:
    for m in model.modules():
        if isinstance(m, Dropout):
            m.keep_prob = keep


def train(model, train_set, val_set=None, config: TrainConfig | None = None, progress=None) -> TrainResult:
    """Shuffled mini-batch training with categorical cross-entropy.

    The final partial batch of each epoch is kept. After every epoch the
    validation accuracy (if a validation set is given) is recorded and the
    best-scoring weights are retained in ``best_state``; ``model`` itself
    ends with the final weights.
    """
    from densocr.pipeline.evaluation import evaluate

    cfg = config or TrainConfig()
    side = model.config.input_side
    tr = prepare(train_set, side, cfg)
    va = prepare(val_set, side, cfg) if val_set is not None and len(val_set) else None
    n = len(tr)
    if cfg.epochs and n == 0:
        raise DataError("training set is empty")
    if cfg.epochs and cfg.batch_size > n:
        raise DataError(f"batch_size {cfg.batch_size} exceeds the {n} training samples")
    if cfg.dropout_keep is not None:
        set_dropout_keep(model, cfg.dropout_keep)

    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    opt = cfg.make_optimizer()
    model.zero_grad()
    history: list[EpochRecord] = []
    result = TrainResult(model, history, optimizer=opt)
    dtype = model.dtype
    for epoch in range(cfg.epochs):
        lr = opt.lr_for_epoch(epoch)
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            imgs = tr.images[idx]
            if cfg.augment is not None:
                imgs = np.stack([apply_augment(im, cfg.augment, aug_rng) for im in imgs])
            try:
                logits = model.forward(to_input(imgs, dtype), training=True)
                loss, _, grad = softmax_cross_entropy(logits, tr.labels[idx])
                model.backward(grad.astype(dtype, copy=False))
                opt.step(model.params(), lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from None
            total += loss * len(idx)
        val_acc = evaluate(model, va).accuracy if va is not None else None
        rec = EpochRecord(epoch + 1, total / n, val_acc, lr)
        history.append(rec)
        log.info("epoch %d loss %.4f val %s", rec.epoch, rec.train_loss, val_acc)
        if progress is not None:
            progress(rec)
        if val_acc is not None and (result.best_val_accuracy is None or val_acc > result.best_val_accuracy):
            result.best_val_accuracy, result.best_epoch = val_acc, epoch + 1
            result.best_state = model.state_dict()
    model.clear_cache()
    return result
