"""Composite layers: dense layers and blocks, transitions, residual separable units, heads."""

from __future__ import annotations

import math

import numpy as np

from densocr.errors import ShapeError
from densocr.nn import functional as F
from densocr.nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Layer,
    Linear,
    ReLU,
    SeparableConv2d,
    Sequential,
)


class DenseLayer(Layer):
    """Pre-activation unit BN -> ReLU -> 3x3 conv whose output is appended to the input."""

    def __init__(self, cin: int, growth: int, name: str, rng: np.random.Generator,
                 momentum: float = 0.9, eps: float = 1e-5):
        super().__init__(name)
        self.cin, self.growth = cin, growth
        self.bn = BatchNorm2d(cin, momentum, eps, name=f"{name}.bn")
        self.relu = ReLU(name=f"{name}.relu")
        self.conv = Conv2d(cin, growth, 3, 1, 1, name=f"{name}.conv", rng=rng)
        self.unit = Sequential([self.bn, self.relu, self.conv], name=f"{name}.unit")

    def children(self):
        return [self.unit]

    def forward(self, x, training=False):
        self._cache = {"cin": x.shape[1]}
        return F.concat_channels(x, self.unit.forward(x, training))

    def backward(self, grad):
        c = self._take_cache()["cin"]
        return grad[:, :c] + self.unit.backward(np.ascontiguousarray(grad[:, c:]))

    def output_shape(self, shape):
        self.unit.output_shape(shape)
        n, c, h, w = shape
        return (n, c + self.growth, h, w)


class DenseBlock(Sequential):
    """``L`` dense layers; each sees the concatenation of everything before it."""

    def __init__(self, cin: int, num_layers: int, growth: int, name: str, rng: np.random.Generator,
                 momentum: float = 0.9, eps: float = 1e-5):
        if num_layers < 1:
            raise ValueError("a dense block needs at least one layer")
        layers = [DenseLayer(cin + i * growth, growth, f"{name}.layer{i + 1}", rng, momentum, eps)
                  for i in range(num_layers)]
        super().__init__(layers, name)
        self.cin, self.num_layers, self.growth = cin, num_layers, growth

    @property
    def out_channels(self) -> int:
        return self.cin + self.num_layers * self.growth

    @property
    def connections(self) -> int:
        return self.num_layers * (self.num_layers + 1) // 2


def same_padding(kernel: int) -> tuple[int, int, int, int]:
    lo, hi = (kernel - 1) // 2, kernel // 2
    return (lo, hi, lo, hi)


class Transition(Sequential):
    """BN -> conv (1x1 or 6x6, channel compression) -> 2x2 average pool, stride 2."""

    def __init__(self, cin: int, compression: float, kernel: int, name: str, rng: np.random.Generator,
                 momentum: float = 0.9, eps: float = 1e-5):
        self.cin = cin
        self.cout = math.ceil(compression * cin)
        self.kernel = kernel
        super().__init__(
            [
                BatchNorm2d(cin, momentum, eps, name=f"{name}.bn"),
                Conv2d(cin, self.cout, kernel, 1, same_padding(kernel), name=f"{name}.conv", rng=rng),
                AvgPool2d(2, 2, name=f"{name}.pool"),
            ],
            name,
        )

    def output_shape(self, shape):
        if shape[2] < 2 or shape[3] < 2:
            raise ShapeError(f"{self.name}: spatial size {shape[2:]} too small to pool")
        return super().output_shape(shape)


class ResidualSeparableUnit(Layer):
    """``x + BN(SepConv(ReLU(x)))`` with channel count preserved."""

    def __init__(self, channels: int, name: str, rng: np.random.Generator,
                 momentum: float = 0.9, eps: float = 1e-5):
        super().__init__(name)
        self.sepconv = SeparableConv2d(channels, channels, 3, 1, 1, name=f"{name}.sepconv", rng=rng)
        self.bn = BatchNorm2d(channels, momentum, eps, name=f"{name}.bn")
        self.branch = Sequential([ReLU(name=f"{name}.relu"), self.sepconv, self.bn], name=f"{name}.branch")

    def children(self):
        return [self.branch]

    def forward(self, x, training=False):
        self._cache = {"ok": True}
        return x + self.branch.forward(x, training)

    def backward(self, grad):
        self._take_cache()
        return grad + self.branch.backward(grad)

    def output_shape(self, shape):
        return self.branch.output_shape(shape)


def plain_head(features: int, num_classes: int, keep_prob: float, seed: int, rng, name: str = "head") -> Sequential:
    """Dropout followed by the classifier layer; softmax is applied by the model."""
    return Sequential(
        [Dropout(keep_prob, seed, name=f"{name}.dropout"), Linear(features, num_classes, name=f"{name}.fc", rng=rng)],
        name,
    )


def word_head(features: int, num_classes: int, hidden: tuple[int, int], keep_prob: float, seed: int, rng,
              name: str = "head") -> Sequential:
    """(fc -> ReLU -> dropout) twice, then the classifier layer."""
    h1, h2 = hidden
    return Sequential(
        [
            Linear(features, h1, name=f"{name}.fc1", rng=rng),
            ReLU(name=f"{name}.relu1"),
            Dropout(keep_prob, seed, name=f"{name}.dropout1"),
            Linear(h1, h2, name=f"{name}.fc2", rng=rng),
            ReLU(name=f"{name}.relu2"),
            Dropout(keep_prob, seed + 1, name=f"{name}.dropout2"),
            Linear(h2, num_classes, name=f"{name}.fc3", rng=rng),
        ],
        name,
    )


def word_head_forward(features: np.ndarray, head: Sequential, training: bool = False) -> np.ndarray:
    """Class probabilities from pooled features through a word head."""
    first = head.layers[0]
    d = int(np.prod(features.shape[1:]))
    if d != first.in_features:
        raise ShapeError(f"word head expects {first.in_features} features, got {d}")
    return F.softmax(head.forward(features.reshape(features.shape[0], -1), training))
