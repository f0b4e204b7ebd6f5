"""Model recipes and named presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

DENSENET_BLOCKS = {
    "densenet121": (6, 12, 24, 16),
    "densenet161": (6, 12, 36, 24),
    "densenet169": (6, 12, 32, 32),
    "densenet201": (6, 12, 48, 32),
}


@dataclass
class ModelConfig:
    architecture: str = "densenet"
    block_layer_counts: tuple[int, ...] = (3, 4, 4)
    growth_rate: int = 12
    initial_channels: int | None = None
    transition_kernel: int = 1
    compression: float = 0.5
    head: str = "plain"
    num_classes: int = 10
    head_hidden_sizes: tuple[int, int] = (256, 128)
    head_dropout_keep: float | None = None
    input_side: int = 64
    in_channels: int = 1
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: bool = False
    xception_units: int = 4
    xception_channels: int = 32
    xception_pool_every: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0
    name: str = field(default="custom")

    def __post_init__(self):
        self.block_layer_counts = tuple(int(v) for v in self.block_layer_counts)
        self.head_hidden_sizes = tuple(int(v) for v in self.head_hidden_sizes)
        if self.initial_channels is None:
            self.initial_channels = 2 * self.growth_rate
        if self.head_dropout_keep is None:
            self.head_dropout_keep = 0.9 if self.head == "word" else 1.0
        self.validate()

    def validate(self) -> None:
        if self.architecture not in ("densenet", "xception-lite"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if not self.block_layer_counts or min(self.block_layer_counts) < 1:
            raise ValueError(f"block_layer_counts must be nonempty positive counts, got {self.block_layer_counts}")
        if self.growth_rate < 1:
            raise ValueError("growth_rate must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.transition_kernel not in (1, 6):
            raise ValueError("transition_kernel must be 1 or 6")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError("compression must lie in (0, 1]")
        if self.head not in ("plain", "word"):
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.head_hidden_sizes) != 2 or min(self.head_hidden_sizes) < 1:
            raise ValueError("head_hidden_sizes must be two positive counts")
        if not 0.0 < self.head_dropout_keep <= 1.0:
            raise ValueError("head_dropout_keep must lie in (0, 1]")
        if self.input_side < 1 or self.initial_channels < 1:
            raise ValueError("input_side and initial_channels must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_layer_counts"] = list(self.block_layer_counts)
        d["head_hidden_sizes"] = list(self.head_hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def model_preset(name: str, /, **overrides) -> ModelConfig:
    """Build a named recipe: ``densenet121/161/169/201``, ``desk``, ``desk-k6`` or ``xception-lite``.

    Bare numbers (``"121"``) are accepted for the DenseNet presets.
    """
    key = name.lower()
    if key.isdigit():
        key = f"densenet{key}"
    if key in DENSENET_BLOCKS:
        base = dict(block_layer_counts=DENSENET_BLOCKS[key], growth_rate=32, compression=0.5)
    elif key in ("desk", "desk-k6"):
        base = dict(block_layer_counts=(3, 4, 4), growth_rate=12, compression=0.5,
                    stem_kernel=3, stem_stride=2, stem_pool=True,
                    transition_kernel=6 if key == "desk-k6" else 1)
    elif key in ("xception-lite", "desk-xception"):
        base = dict(architecture="xception-lite", xception_units=4, xception_channels=48,
                    stem_kernel=3, stem_stride=2, xception_pool_every=1)
    else:
        raise ValueError(f"unknown model preset {name!r}")
    base["name"] = key
    base.update(overrides)
    return ModelConfig(**base)
