import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from densocr.augment import (
    AugmentPolicy,
    apply_augment,
    average_views,
    tta_predict,
    tta_predict_batch,
    warp_affine,
)
from densocr.models import build_model, model_preset

images = arrays(np.uint8, st.tuples(st.integers(3, 12), st.integers(3, 12)))


def test_zero_magnitude_policy_is_identity():
    img = np.random.default_rng(0).integers(0, 256, (9, 9), dtype=np.uint8)
    out = apply_augment(img, AugmentPolicy.identity(), np.random.default_rng(1))
    np.testing.assert_array_equal(out, img)


def test_hflip_twice_is_identity():
    img = np.random.default_rng(0).integers(0, 256, (6, 8), dtype=np.uint8)
    policy = AugmentPolicy.word(max_rotation_deg=0, max_shift_px=0, scale_range=(1, 1))
    flipped = [apply_augment(img, policy, np.random.default_rng(s)) for s in range(20)]
    assert any(np.array_equal(f, img[:, ::-1]) for f in flipped)
    np.testing.assert_array_equal(img[:, ::-1][:, ::-1], img)


def test_rotation_by_90_degrees_on_fixture():
    img = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9]], dtype=np.uint8)
    # counterclockwise quarter turn
    np.testing.assert_array_equal(warp_affine(img, 90.0), np.rot90(img))
    np.testing.assert_array_equal(warp_affine(img, -90.0), np.rot90(img, -1))


def test_shift_fills_with_background():
    img = np.full((5, 5), 200, np.uint8)
    img[2, 2] = 10
    out = warp_affine(img, 0.0, (1, 2))
    assert out[3, 4] == 10
    assert out[0].tolist() == [200] * 5


@given(images, st.integers(0, 10_000))
def test_augment_reproducible_and_in_range(img, seed):
    policy = AugmentPolicy.digit_char()
    a = apply_augment(img, policy, np.random.default_rng(seed))
    b = apply_augment(img, policy, np.random.default_rng(seed))
    assert a.tobytes() == b.tobytes()
    assert a.shape == img.shape and a.dtype == np.uint8
    w = apply_augment(img, AugmentPolicy.word(), np.random.default_rng(seed))
    assert w.shape == img.shape


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(kind="digit_char", allow_hflip=True)
    with pytest.raises(ValueError):
        AugmentPolicy(kind="digit_char", scale_range=(0.9, 1.1))
    with pytest.raises(ValueError):
        AugmentPolicy(kind="word", filter_ops=("median",))
    with pytest.raises(ValueError):
        AugmentPolicy(scale_range=(1.1, 1.2), kind="word", filter_ops=())
    with pytest.raises(ValueError):
        AugmentPolicy(filter_ops=("sharpen",))
    p = AugmentPolicy.word()
    assert AugmentPolicy.from_dict(p.to_dict()) == p


def test_average_views_example():
    out = average_views([np.array([0.8, 0.2]), np.array([0.4, 0.6])])
    np.testing.assert_allclose(out, [0.6, 0.4], atol=1e-15)


@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 10_000))
def test_average_views_convex_and_normalized(n, k, seed):
    r = np.random.default_rng(seed)
    views = [r.dirichlet(np.ones(k), size=3) for _ in range(n)]
    out = average_views(views)
    stacked = np.stack(views)
    assert np.all(out >= stacked.min(axis=0)) and np.all(out <= stacked.max(axis=0))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(out, stacked.mean(axis=0), atol=1e-12)


def test_average_views_identical_views_exact():
    p = np.random.default_rng(0).dirichlet(np.ones(10), size=4).astype(np.float32)
    np.testing.assert_array_equal(average_views([p] * 8), p)


@pytest.fixture(scope="module")
def tiny_model():
    return build_model(model_preset("desk", input_side=32, seed=2))


def test_tta_single_view_and_identity_policy_equal_plain(tiny_model):
    imgs = np.random.default_rng(3).integers(0, 256, (5, 32, 32), dtype=np.uint8)
    plain = tiny_model.predict_proba(imgs[:, None] / np.float32(255))
    one = tta_predict_batch(tiny_model, imgs, 1, AugmentPolicy.digit_char(), np.random.default_rng(0))
    ident = tta_predict_batch(tiny_model, imgs, 6, AugmentPolicy.identity(), np.random.default_rng(0))
    np.testing.assert_array_equal(one, plain)
    np.testing.assert_array_equal(ident, plain)
    single = tta_predict(tiny_model, imgs[2], 1)
    np.testing.assert_array_equal(single, tiny_model.predict_proba(imgs[2:3, None] / np.float32(255))[0])


def test_tta_sums_to_one_and_rejects_zero_views(tiny_model):
    img = np.random.default_rng(4).integers(0, 256, (40, 40), dtype=np.uint8)
    probs = tta_predict(tiny_model, img, 5, AugmentPolicy.digit_char(), np.random.default_rng(1))
    assert probs.shape == (10,) and abs(probs.sum() - 1.0) < 1e-6
    with pytest.raises(ValueError):
        tta_predict(tiny_model, img, 0)
