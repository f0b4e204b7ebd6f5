"""Stateful layer objects built on the functional kernels.

A layer caches what its backward pass needs during ``forward`` and drops the
cache once ``backward`` has consumed it. Callers that want to run forward
passes concurrently must each hold their own copy of the model.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from densocr.errors import BackwardError, ShapeError
from densocr.nn import functional as F
from densocr.nn.tensor import get_default_dtype


class Param:
    """A trainable array together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(get_default_dtype())


class Layer:
    """Base class. Subclasses override ``forward``, ``backward`` and ``output_shape``."""

    def __init__(self, name: str = ""):
        self.name = name
        self._cache: dict | None = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return tuple(shape)

    def children(self) -> list["Layer"]:
        return []

    def own_params(self) -> list[Param]:
        return []

    def own_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def params(self) -> list[Param]:
        out = list(self.own_params())
        for child in self.children():
            out.extend(child.params())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = dict(self.own_buffers())
        for child in self.children():
            out.update(child.buffers())
        return out

    def modules(self) -> Iterator["Layer"]:
        yield self
        for child in self.children():
            yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def astype(self, dtype) -> "Layer":
        for p in self.params():
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)
        for layer in self.modules():
            layer._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        pass

    def _take_cache(self) -> dict:
        cache = self._cache
        if cache is None:
            raise BackwardError(f"{type(self).__name__} {self.name!r}: backward without forward")
        self._cache = None
        return cache

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Conv2d(Layer):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1, padding=0, bias: bool = True,
                 name: str = "conv", rng: np.random.Generator | None = None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = F.normalize_padding(padding)
        self.weight = Param(f"{name}.weight", he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = Param(f"{name}.bias", np.zeros(cout, dtype=get_default_dtype())) if bias else None

    def own_params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, training=False):
        self._cache = {}
        return F.conv2d_forward(x, self.weight, self.bias, self.stride, self.padding, cache=self._cache)

    def backward(self, grad):
        dx, dw, db = F.conv2d_backward(grad, self._take_cache())
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.cin:
            raise ShapeError(f"{self.name}: expects {self.cin} channels, got {c}")
        ho, wo = F.conv_output_hw(h, w, self.kernel, self.kernel, self.stride, self.padding)
        return (n, self.cout, ho, wo)


class DepthwiseConv2d(Layer):
    def __init__(self, channels: int, kernel: int, stride: int = 1, padding=0, name: str = "dwconv",
                 rng: np.random.Generator | None = None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.channels, self.kernel, self.stride = channels, kernel, stride
        self.padding = F.normalize_padding(padding)
        self.weight = Param(f"{name}.weight", he_normal(rng, (channels, 1, kernel, kernel), kernel * kernel))

    def own_params(self):
        return [self.weight]

    def forward(self, x, training=False):
        self._cache = {}
        return F.depthwise_conv2d_forward(x, self.weight, self.stride, self.padding, cache=self._cache)

    def backward(self, grad):
        dx, dw = F.depthwise_conv2d_backward(grad, self._take_cache())
        self.weight.grad += dw
        return dx

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.channels:
            raise ShapeError(f"{self.name}: expects {self.channels} channels, got {c}")
        ho, wo = F.conv_output_hw(h, w, self.kernel, self.kernel, self.stride, self.padding)
        return (n, c, ho, wo)


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, name: str = "bn"):
        super().__init__(name)
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        dt = get_default_dtype()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dt))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dt))
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)

    def own_params(self):
        return [self.gamma, self.beta]

    def own_buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def forward(self, x, training=False):
        self._cache = {}
        return F.batchnorm_forward(x, self.gamma, self.beta, self.running_mean, self.running_var, training,
                                   self.momentum, self.eps, cache=self._cache)

    def backward(self, grad):
        dx, dg, db = F.batchnorm_backward(grad, self._take_cache())
        self.gamma.grad += dg
        self.beta.grad += db
        return dx

    def output_shape(self, shape):
        if shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expects {self.channels} channels, got {shape[1]}")
        return tuple(shape)


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        super().__init__(name)

    def forward(self, x, training=False):
        self._cache = {}
        return F.relu(x, cache=self._cache)

    def backward(self, grad):
        return F.relu_backward(grad, self._take_cache())


class AvgPool2d(Layer):
    def __init__(self, window: int = 2, stride: int | None = None, name: str = "avgpool"):
        super().__init__(name)
        self.window, self.stride = window, window if stride is None else stride

    def forward(self, x, training=False):
        self._cache = {}
        return F.avg_pool(x, self.window, self.stride, cache=self._cache)

    def backward(self, grad):
        return F.avg_pool_backward(grad, self._take_cache())

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, c, *F.conv_output_hw(h, w, self.window, self.window, self.stride, 0))


class MaxPool2d(AvgPool2d):
    def __init__(self, window: int = 2, stride: int | None = None, name: str = "maxpool"):
        super().__init__(window, stride, name)

    def forward(self, x, training=False):
        self._cache = {}
        return F.max_pool(x, self.window, self.stride, cache=self._cache)

    def backward(self, grad):
        return F.max_pool_backward(grad, self._take_cache())


class GlobalAvgPool(Layer):
    def __init__(self, name: str = "gap"):
        super().__init__(name)

    def forward(self, x, training=False):
        self._cache = {}
        return F.global_avg_pool(x, cache=self._cache)

    def backward(self, grad):
        return F.global_avg_pool_backward(grad, self._take_cache())

    def output_shape(self, shape):
        return (shape[0], shape[1], 1, 1)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        super().__init__(name)

    def forward(self, x, training=False):
        self._cache = {"shape": x.shape}
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache()["shape"])

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, name: str = "fc",
                 rng: np.random.Generator | None = None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.weight = Param(f"{name}.weight", he_normal(rng, (out_features, in_features), in_features))
        self.bias = Param(f"{name}.bias", np.zeros(out_features, dtype=get_default_dtype()))

    def own_params(self):
        return [self.weight, self.bias]

    def forward(self, x, training=False):
        self._cache = {}
        return F.linear(x, self.weight, self.bias, cache=self._cache)

    def backward(self, grad):
        dx, dw, db = F.linear_backward(grad, self._take_cache())
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def output_shape(self, shape):
        d = int(np.prod(shape[1:]))
        if d != self.in_features:
            raise ShapeError(f"{self.name}: expects {self.in_features} features, got {d}")
        return (shape[0], self.out_features)


class Dropout(Layer):
    def __init__(self, keep_prob: float, seed: int = 0, name: str = "dropout"):
        super().__init__(name)
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        self._cache = {}
        return F.dropout(x, self.keep_prob, training, self.rng, cache=self._cache)

    def backward(self, grad):
        return F.dropout_backward(grad, self._take_cache())


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = ""):
        super().__init__(name)
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape


class SeparableConv2d(Sequential):
    """Depthwise KxK convolution followed by a bias-free 1x1 pointwise convolution."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, padding=1, name: str = "sepconv",
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.depthwise = DepthwiseConv2d(cin, kernel, stride, padding, name=f"{name}.depthwise", rng=rng)
        self.pointwise = Conv2d(cin, cout, 1, bias=False, name=f"{name}.pointwise", rng=rng)
        super().__init__([self.depthwise, self.pointwise], name)
