import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from densocr.errors import NonFiniteError
from densocr.nn import Param
from densocr.optim import Optimizer, adam_step, sgd_step


def _param(value, grad, name="w"):
    p = Param(name, np.array(value, dtype=np.float64))
    p.grad[...] = grad
    return p


def test_sgd_zero_lr_leaves_params():
    p = _param([1.0, -2.0], [3.0, 4.0])
    sgd_step([p], Optimizer(learning_rate=0.0, weight_decay=0.1))
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_sgd_examples():
    p = _param([1.0], [1.0])
    sgd_step([p], Optimizer(learning_rate=0.1))
    assert p.value[0] == pytest.approx(0.9, abs=1e-15)
    assert p.grad[0] == 0.0

    p = _param([1.0], [0.0])
    sgd_step([p], Optimizer(learning_rate=0.09, weight_decay=0.0001))
    assert p.value[0] == pytest.approx(0.999991, abs=1e-15)


def test_sgd_momentum_buffer():
    p = _param([0.0], [1.0])
    opt = Optimizer(learning_rate=1.0, momentum=0.5)
    sgd_step([p], opt)
    p.grad[...] = 1.0
    sgd_step([p], opt)
    # buffers 1 then 1.5
    assert p.value[0] == pytest.approx(-2.5)


def test_nan_gradient_names_parameter():
    p = _param([1.0], [np.nan], name="block1.conv.weight")
    with pytest.raises(NonFiniteError, match="block1.conv.weight"):
        sgd_step([p], Optimizer())
    with pytest.raises(NonFiniteError, match="block1.conv.weight"):
        adam_step([p], Optimizer(kind="adam"))


def test_adam_first_step_moves_by_lr():
    p = _param([0.5, -0.5, 2.0], [3.0, -0.01, 7.0])
    adam_step([p], Optimizer(kind="adam", learning_rate=0.001, epsilon=1e-12))
    np.testing.assert_allclose(np.abs(p.value - [0.5, -0.5, 2.0]), 0.001, rtol=1e-6)
    np.testing.assert_allclose(np.sign([0.5, -0.5, 2.0] - p.value), [1, -1, 1])


def test_adam_zero_gradient_is_still():
    p = _param([1.0, 2.0], [0.0, 0.0])
    opt = Optimizer(kind="adam", learning_rate=0.1)
    for _ in range(5):
        adam_step([p], opt)
    np.testing.assert_array_equal(p.value, [1.0, 2.0])
    assert opt.t == 5


def test_adam_quadratic_matches_scalar_recurrence():
    lr, b1, b2, eps = 0.0008, 0.9, 0.999, 1e-8
    p = _param([1.0], [0.0])
    opt = Optimizer(kind="adam", learning_rate=lr)
    for _ in range(10):
        p.grad[...] = p.value  # d/dw of w^2/2
        adam_step([p], opt)

    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    assert abs(p.value[0] - w) <= 1e-10


@given(st.floats(-10, 10), st.floats(0.001, 0.5))
def test_sgd_decreases_convex_quadratic(w0, lr):
    if abs(w0) < 1e-6:
        return
    p = _param([w0], [w0])
    sgd_step([p], Optimizer(learning_rate=lr))
    assert p.value[0] ** 2 < w0**2


def test_deterministic_and_invariant_to_extra_zero_grad_params():
    def run(extra):
        ps = [_param([1.0, 2.0], [0.3, -0.2])]
        if extra:
            ps.append(_param([5.0], [0.0], name="idle"))
        opt = Optimizer(kind="adam", learning_rate=0.01)
        for _ in range(3):
            ps[0].grad[...] = [0.3, -0.2]
            adam_step(ps, opt)
        return ps[0].value

    np.testing.assert_array_equal(run(False), run(False))
    np.testing.assert_array_equal(run(False), run(True))


def test_step_decay_schedule():
    opt = Optimizer(learning_rate=0.1, lr_decay_every=2, lr_decay_factor=0.5)
    assert [opt.lr_for_epoch(e) for e in range(5)] == [0.1, 0.1, 0.05, 0.05, 0.025]
    assert Optimizer(learning_rate=0.09).lr_for_epoch(100) == 0.09


def test_state_round_trip():
    p = _param([1.0, 2.0], [0.1, 0.2])
    opt = Optimizer(kind="adam", learning_rate=0.01)
    adam_step([p], opt)
    arrays, meta = opt.state_arrays()
    other = Optimizer()
    other.load_state_arrays(arrays, meta)
    assert other.kind == "adam" and other.t == 1
    np.testing.assert_array_equal(other.moments["w"], opt.moments["w"])


def test_invalid_settings():
    with pytest.raises(ValueError):
        Optimizer(kind="rmsprop")
    with pytest.raises(ValueError):
        Optimizer(learning_rate=-1)
