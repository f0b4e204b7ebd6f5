"""SGD and Adam with coupled L2 regularization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from densocr.errors import NonFiniteError


@dataclass
class Optimizer:
    """Optimizer hyperparameters plus per-parameter state.

    ``weight_decay`` is classic L2: it is added to the gradient
    (``g + weight_decay * w``) before the update rule runs.
    """

    kind: str = "sgd"
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.1
    t: int = 0
    moments: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    velocities: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    def lr_for_epoch(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def step(self, params, lr: float | None = None) -> None:
        if self.kind == "sgd":
            sgd_step(params, self, lr)
        else:
            adam_step(params, self, lr)

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays = {f"m/{k}": v for k, v in self.moments.items()}
        arrays.update({f"v/{k}": v for k, v in self.velocities.items()})
        meta = {k: getattr(self, k) for k in ("kind", "learning_rate", "weight_decay", "momentum", "beta1",
                                               "beta2", "epsilon", "lr_decay_every", "lr_decay_factor", "t")}
        return arrays, meta

    def load_state_arrays(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for k, v in meta.items():
            setattr(self, k, v)
        self.moments = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m/")}
        self.velocities = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v/")}


def _effective_grad(p, weight_decay: float) -> np.ndarray:
    if not np.isfinite(p.grad).all():
        raise NonFiniteError(f"non-finite gradient in parameter {p.name!r}")
    if weight_decay:
        return p.grad + weight_decay * p.value
    return p.grad


def sgd_step(params, state: Optimizer, lr: float | None = None) -> None:
    """``w <- w - lr * (g + wd * w)``, optionally through a momentum buffer; grads are zeroed."""
    lr = state.learning_rate if lr is None else lr
    params = list(params)
    grads = [_effective_grad(p, state.weight_decay) for p in params]
    for p, g in zip(params, grads):
        if state.momentum:
            buf = state.velocities.get(p.name)
            if buf is None:
                buf = state.velocities[p.name] = np.zeros_like(p.value)
            buf *= state.momentum
            buf += g
            g = buf
        p.value -= p.value.dtype.type(lr) * g
        p.grad[...] = 0
    state.t += 1


def adam_step(params, state: Optimizer, lr: float | None = None) -> None:
    """Adam with bias-corrected first and second moments; grads are zeroed."""
    lr = state.learning_rate if lr is None else lr
    params = list(params)
    grads = [_effective_grad(p, state.weight_decay) for p in params]
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for p, g in zip(params, grads):
        m = state.moments.get(p.name)
        if m is None:
            m = state.moments[p.name] = np.zeros_like(p.value)
            state.velocities[p.name] = np.zeros_like(p.value)
        v = state.velocities[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.value -= (lr * update).astype(p.value.dtype, copy=False)
        p.grad[...] = 0
