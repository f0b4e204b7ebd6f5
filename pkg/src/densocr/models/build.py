"""Model container, builders and checkpoint I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from densocr.errors import FormatError, ShapeError
from densocr.models.blocks import DenseBlock, ResidualSeparableUnit, Transition, plain_head, word_head
from densocr.models.config import ModelConfig
from densocr.nn import functional as F
from densocr.nn.checkpoint import decode_checkpoint, encode_checkpoint
from densocr.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
    Sequential,
)
from densocr.nn.tensor import as_nchw, check_finite, precision


class Model(Sequential):
    """A static sequence of named stages plus the config that built it.

    ``forward`` returns logits; ``predict_proba`` returns softmax probabilities.
    """

    def __init__(self, config: ModelConfig, stages: list[Layer]):
        super().__init__(stages, name=config.name)
        self.config = config

    @property
    def dtype(self):
        return self.params()[0].value.dtype

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    @property
    def input_shape(self) -> tuple:
        return (1, self.config.in_channels, self.config.input_side, self.config.input_side)

    def forward(self, x, training=False):
        x = as_nchw(x).astype(self.dtype, copy=False)
        return check_finite(super().forward(x, training), f"model {self.name}")

    def predict_proba(self, x, batch_size: int = 128) -> np.ndarray:
        x = as_nchw(x)
        if x.shape[0] == 0:
            return np.zeros((0, self.config.num_classes), dtype=self.dtype)
        chunks = [F.softmax(self.forward(x[i : i + batch_size], training=False))
                  for i in range(0, x.shape[0], batch_size)]
        self.clear_cache()
        return np.concatenate(chunks, axis=0)

    def clear_cache(self) -> None:
        for m in self.modules():
            m._cache = None

    def shape_trace(self, input_shape: tuple | None = None) -> list[tuple[str, tuple]]:
        """Statically derived output shape after every top-level stage."""
        shape = tuple(input_shape or self.input_shape)
        trace = []
        for stage in self.layers:
            try:
                shape = stage.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"stage {stage.name!r} rejects input {shape}: {exc}") from None
            trace.append((stage.name, tuple(shape)))
        return trace

    def forward_trace(self, x) -> list[tuple[str, tuple]]:
        """Actual output shape after every top-level stage (inference mode)."""
        x = as_nchw(x).astype(self.dtype, copy=False)
        trace = []
        for stage in self.layers:
            x = stage.forward(x, training=False)
            trace.append((stage.name, tuple(x.shape)))
        self.clear_cache()
        return trace

    def stage(self, name: str) -> Layer:
        for s in self.layers:
            if s.name == name:
                return s
        raise KeyError(name)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.value.copy() for p in self.params()}
        for name, arr in self.buffers().items():
            state[name] = arr.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.params()}
        buffers = self.buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise FormatError(f"state is missing {len(missing)} entries, e.g. {sorted(missing)[:3]}")
        for name, p in params.items():
            if state[name].shape != p.value.shape:
                raise ShapeError(f"{name}: stored shape {state[name].shape} != model shape {p.value.shape}")
            p.value[...] = state[name]
        for name, arr in buffers.items():
            arr[...] = state[name]


def _validated(model: Model) -> Model:
    model.shape_trace()
    return model


def _stem(cfg: ModelConfig, channels: int, rng) -> list[Layer]:
    k = cfg.stem_kernel
    stages: list[Layer] = [Conv2d(cfg.in_channels, channels, k, cfg.stem_stride, ((k - 1) // 2, k // 2, (k - 1) // 2, k // 2),
                                  name="stem", rng=rng)]
    if cfg.stem_pool:
        stages.append(MaxPool2d(2, 2, name="stem_pool"))
    return stages


def _head(cfg: ModelConfig, features: int, rng) -> Sequential:
    if cfg.head == "word":
        return word_head(features, cfg.num_classes, cfg.head_hidden_sizes, cfg.head_dropout_keep, cfg.seed + 101, rng)
    return plain_head(features, cfg.num_classes, cfg.head_dropout_keep, cfg.seed + 101, rng)


def build_densenet(config: ModelConfig) -> Model:
    """stem -> (dense block -> transition)* -> dense block -> BN -> ReLU -> global pool -> head."""
    if config.architecture != "densenet":
        raise ValueError(f"build_densenet needs architecture 'densenet', got {config.architecture!r}")
    rng = np.random.default_rng(config.seed)
    m, eps = config.bn_momentum, config.bn_eps
    stages = _stem(config, config.initial_channels, rng)
    c = config.initial_channels
    nblocks = len(config.block_layer_counts)
    for b, n_layers in enumerate(config.block_layer_counts, start=1):
        block = DenseBlock(c, n_layers, config.growth_rate, f"block{b}", rng, m, eps)
        stages.append(block)
        c = block.out_channels
        if b < nblocks:
            trans = Transition(c, config.compression, config.transition_kernel, f"transition{b}", rng, m, eps)
            stages.append(trans)
            c = trans.cout
    stages += [BatchNorm2d(c, m, eps, name="final_bn"), ReLU(name="final_relu"), GlobalAvgPool(name="pool"),
               Flatten(name="flatten"), _head(config, c, rng)]
    return _validated(Model(config, stages))


def build_xception_lite(config: ModelConfig) -> Model:
    """stem -> residual separable units (optionally max-pooled) -> ReLU -> global pool -> head."""
    if config.architecture != "xception-lite":
        raise ValueError(f"build_xception_lite needs architecture 'xception-lite', got {config.architecture!r}")
    rng = np.random.default_rng(config.seed)
    c = config.xception_channels
    stages = _stem(config, c, rng)
    for u in range(1, config.xception_units + 1):
        stages.append(ResidualSeparableUnit(c, f"unit{u}", rng, config.bn_momentum, config.bn_eps))
        if config.xception_pool_every and u % config.xception_pool_every == 0:
            stages.append(MaxPool2d(2, 2, name=f"unit{u}_pool"))
    stages += [ReLU(name="final_relu"), GlobalAvgPool(name="pool"), Flatten(name="flatten"), _head(config, c, rng)]
    return _validated(Model(config, stages))


def build_model(config: ModelConfig) -> Model:
    if config.architecture == "xception-lite":
        return build_xception_lite(config)
    return build_densenet(config)


def _model_metadata(model: Model, extra: dict | None) -> dict:
    meta = {"format": "densocr-checkpoint", "config": model.config.to_dict()}
    if extra:
        meta.update(extra)
    return meta


def save_model(model: Model, path, optimizer=None, extra: dict | None = None) -> None:
    """Write weights, BN statistics and (optionally) optimizer state to one checkpoint file."""
    arrays = model.state_dict()
    meta = _model_metadata(model, extra)
    if optimizer is not None:
        opt_arrays, opt_meta = optimizer.state_arrays()
        arrays.update({f"optim/{k}": v for k, v in opt_arrays.items()})
        meta["optimizer"] = opt_meta
    Path(path).write_bytes(encode_checkpoint(arrays, meta, model.dtype))


def load_model(path, optimizer=None) -> Model:
    arrays, meta, dtype = decode_checkpoint(Path(path).read_bytes())
    if meta.get("format") != "densocr-checkpoint" or "config" not in meta:
        raise FormatError(f"{path}: not a model checkpoint")
    with precision(dtype):
        model = build_model(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("optim/")})
    if optimizer is not None and "optimizer" in meta:
        optimizer.load_state_arrays(
            {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")}, meta["optimizer"]
        )
    model.checkpoint_metadata = meta
    return model
