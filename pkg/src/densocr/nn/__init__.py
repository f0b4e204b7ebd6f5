"""Numpy layer primitives with explicit forward/backward passes."""

from densocr.nn.tensor import (
    check_finite,
    get_default_dtype,
    precision,
    set_default_dtype,
)
from densocr.nn.functional import (
    avg_pool,
    batchnorm_forward,
    concat_channels,
    conv2d_forward,
    depthwise_separable_conv_forward,
    dropout,
    global_avg_pool,
    linear,
    max_pool,
    relu,
    softmax,
    softmax_cross_entropy,
)
from densocr.nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    Param,
    ReLU,
    SeparableConv2d,
    Sequential,
)
from densocr.nn.gradcheck import grad_check

__all__ = [
    "AvgPool2d",
    "BatchNorm2d",
    "Conv2d",
    "DepthwiseConv2d",
    "Dropout",
    "Flatten",
    "GlobalAvgPool",
    "Layer",
    "Linear",
    "MaxPool2d",
    "Param",
    "ReLU",
    "SeparableConv2d",
    "Sequential",
    "avg_pool",
    "batchnorm_forward",
    "check_finite",
    "concat_channels",
    "conv2d_forward",
    "depthwise_separable_conv_forward",
    "dropout",
    "get_default_dtype",
    "global_avg_pool",
    "grad_check",
    "linear",
    "max_pool",
    "precision",
    "relu",
    "set_default_dtype",
    "softmax",
    "softmax_cross_entropy",
]
