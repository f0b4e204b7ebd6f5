"""Central finite-difference gradient checking."""

from __future__ import annotations

import copy

import numpy as np

from densocr.nn.layers import Dropout


def _dropout_states(model):
    modules = model.modules() if hasattr(model, "modules") else []
    return [(m, copy.deepcopy(m.rng.bit_generator.state)) for m in modules if isinstance(m, Dropout)]


def _restore(states):
    for m, st in states:
        m.rng.bit_generator.state = copy.deepcopy(st)


def _pick(size: int, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def grad_check(
    model,
    x: np.ndarray,
    eps: float = 1e-5,
    training: bool = True,
    labels: np.ndarray | None = None,
    max_per_tensor: int | None = None,
    seed: int = 0,
    return_details: bool = False,
    skip_kinks: bool = False,
    kink_tol: float = 1e-3,
):
    """Largest relative error between analytic and central-difference gradients.

    ``model`` is anything with ``forward(x, training)``, ``backward(grad)`` and
    ``params()``. The scalar loss is a fixed random projection of the output,
    or mean cross-entropy when ``labels`` is given. Relative error per element
    is ``|a - n| / max(|a|, |n|, 1e-12)``; the maximum over every checked
    parameter and input element is returned. ``max_per_tensor`` samples that
    many elements per tensor instead of checking them all.

    With ``skip_kinks`` an element whose forward and backward one-sided
    slopes disagree by more than ``kink_tol`` (relative) sits on a ReLU or
    max-pool switch inside the +-eps bracket; it has no derivative there and
    is left out. The number of skipped elements is reported in the details
    under ``"_kinks"``.

    Run at float64: cast the model with ``model.astype(np.float64)`` first.
    """
    from densocr.nn.functional import softmax_cross_entropy

    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    drop_states = _dropout_states(model)

    _restore(drop_states)
    out = model.forward(x, training)
    if labels is None:
        proj = rng.standard_normal(out.shape)

        def loss_of(o):
            return float(np.sum(o * proj))

        upstream = proj.copy()
    else:
        def loss_of(o):
            return softmax_cross_entropy(o, labels)[0]

        upstream = softmax_cross_entropy(out, labels)[2]

    for p in model.params():
        p.zero_grad()
    dx = model.backward(upstream)

    def evaluate() -> float:
        _restore(drop_states)
        return loss_of(model.forward(x, training))

    base = evaluate() if skip_kinks else 0.0
    kinks = 0
    details = {}
    targets = [("input", x, dx)] + [(p.name, p.value, p.grad.copy()) for p in model.params()]
    worst = 0.0
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        ana = analytic.reshape(-1)
        tensor_worst = 0.0
        for i in _pick(flat.size, max_per_tensor, rng):
            old = flat[i]
            flat[i] = old + eps
            up = evaluate()
            flat[i] = old - eps
            down = evaluate()
            flat[i] = old
            num = (up - down) / (2 * eps)
            if skip_kinks:
                fwd, bwd = (up - base) / eps, (base - down) / eps
                if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1e-8):
                    kinks += 1
                    continue
            a = float(ana[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-12)
            tensor_worst = max(tensor_worst, err)
        details[name] = tensor_worst
        worst = max(worst, tensor_worst)
    _restore(drop_states)
    details["_kinks"] = kinks
    return (worst, details) if return_details else worst
