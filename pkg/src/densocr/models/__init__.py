"""DenseNet and Xception-style classifiers built from the nn primitives."""

from densocr.models.blocks import DenseBlock, DenseLayer, ResidualSeparableUnit, Transition, word_head_forward
from densocr.models.build import Model, build_densenet, build_model, build_xception_lite, load_model, save_model
from densocr.models.config import DENSENET_BLOCKS, ModelConfig, model_preset

__all__ = [
    "DENSENET_BLOCKS",
    "DenseBlock",
    "DenseLayer",
    "Model",
    "ModelConfig",
    "ResidualSeparableUnit",
    "Transition",
    "build_densenet",
    "build_model",
    "build_xception_lite",
    "load_model",
    "model_preset",
    "save_model",
    "word_head_forward",
]
