"""Named run configurations.

The full-scale presets carry the published training recipes for the HODA and
Sadri corpora along with the split sizes reported for them. ``desk`` is the
scaled-down recipe that trains in minutes on a laptop CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from densocr.augment import AugmentPolicy
from densocr.models import ModelConfig, model_preset
from densocr.pipeline.training import TrainConfig


@dataclass
class RunPreset:
    name: str
    model: ModelConfig
    train: TrainConfig
    fractions: tuple[float, float, float]
    published_split: tuple[int, int, int] | None = None
    notes: str = ""
    ensemble: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model.to_dict(), "train": self.train.to_dict(),
                "fractions": list(self.fractions),
                "published_split": list(self.published_split) if self.published_split else None,
                "notes": self.notes, "ensemble": list(self.ensemble)}


def _full(name, side, fractions, split, epochs, batch, lr, keep, optimizer="sgd", head="plain", policy=None,
          ensemble=(), notes=""):
    model = model_preset("densenet121", input_side=side, head=head, head_dropout_keep=keep, name=name)
    train = TrainConfig(epochs=epochs, batch_size=batch, learning_rate=lr, weight_decay=1e-4, dropout_keep=keep,
                        optimizer=optimizer, augment=policy, tta_policy=policy, dilate=True, median=True)
    return RunPreset(name, model, train, fractions, split, notes, tuple(ensemble))


def _desk() -> RunPreset:
    model = model_preset("desk")
    train = TrainConfig(epochs=10, batch_size=64, learning_rate=0.05, weight_decay=1e-4, optimizer="sgd",
                        tta_policy=AugmentPolicy.digit_char(max_rotation_deg=5.0, max_shift_px=1, filter_ops=()))
    return RunPreset("desk", model, train, (0.6, 0.2, 0.2), None,
                     "desk-scale DenseNet (blocks 3/4/4, growth 12) for synthetic glyphs")


def run_preset(name: str) -> RunPreset:
    key = name.lower()
    digit_char = AugmentPolicy.digit_char()
    if key == "hoda-digit":
        return _full(key, 64, (0.6, 0.2, 0.2), (60000, 22352, 20000), 150, 2048, 0.09, 0.85, policy=digit_char)
    if key == "hoda-char":
        return _full(key, 64, (0.7, 0.2, 0.1), (63580, 17706, 7065), 150, 2048, 0.09, 0.85, policy=digit_char)
    if key == "sadri-digit":
        return _full(key, 64, (0.6, 0.2, 0.2), (60000, 17194, 20000), 150, 2048, 0.09, 0.9, policy=digit_char)
    if key == "sadri-char":
        return _full(key, 64, (0.8, 0.15, 0.05), (34369, 6445, 2148), 150, 1024, 0.09, 0.9, policy=digit_char)
    if key == "sadri-word":
        return _full(key, 80, (0.73, 0.12, 0.15), (51312, 8139, 10496), 270, 1024, 0.0008, 0.9,
                     optimizer="adam", head="word", policy=AugmentPolicy.word(),
                     ensemble=("densenet121", "densenet161", "densenet169", "densenet201", "xception-lite"),
                     notes="members are trained separately and combined by max voting")
    if key == "desk":
        return _desk()
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


PRESET_NAMES = ("hoda-digit", "hoda-char", "sadri-digit", "sadri-char", "sadri-word", "desk")
