import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semisup.augment import (
    ORIGINAL,
    STRONG,
    STRONG_OPS,
    WEAK,
    AugmentPolicy,
    Sample,
    ViewMaker,
    apply_op,
    cutout,
    hflip,
    sample_rng,
    strong,
    strong_payload,
    translate,
    weak,
    weak_payload,
)
from semisup.data import gen_shapes


@pytest.fixture(scope="module")
def shapes():
    return gen_shapes(20, rng=3)


def test_weak_without_flip_or_shift_is_identity(shapes):
    x = shapes.X[0]
    out = weak(Sample(0, x, 1), np.random.default_rng(0), AugmentPolicy(flip=False, shift=0.0))
    np.testing.assert_array_equal(out.payload, x)
    assert out.id == 0 and out.label == 1


def test_flip_is_an_involution_and_keeps_mass(shapes):
    x = shapes.X[1]
    np.testing.assert_array_equal(hflip(hflip(x)), x)
    assert hflip(x).sum() == pytest.approx(x.sum(), rel=1e-12)


def test_shift_then_reverse_restores_interior():
    img = np.zeros((16, 16, 3))
    img[5:11, 4:12] = 0.7
    back = translate(translate(img, 2, -3), -2, 3)
    np.testing.assert_array_equal(back, img)


def test_strong_at_zero_magnitude_is_identity(shapes):
    x = shapes.X[2]
    pol = AugmentPolicy(kind="strong", magnitude=0.0, cutout=0.0)
    np.testing.assert_array_equal(strong_payload(x, np.random.default_rng(5), pol), x)
    v = np.linspace(0, 1, 9)
    np.testing.assert_array_equal(strong_payload(v, np.random.default_rng(5), pol), v)


@pytest.mark.parametrize("name", STRONG_OPS)
def test_each_op_stays_in_range(name, shapes):
    r = np.random.default_rng(0)
    for x in shapes.X[:5]:
        out = np.clip(apply_op(name, x, 1.0, r), 0, 1)
        assert out.shape == x.shape
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(apply_op(name, x, 0.0, r), x)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 10.0))
def test_strong_output_clamped(seed, magnitude):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(16, 16, 3))
    out = strong_payload(x, r, AugmentPolicy(kind="strong", magnitude=magnitude))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_cutout_pixel_count():
    for W, frac in ((32, 0.5), (28, 0.5), (17, 0.25)):
        img = np.ones((W, W, 3))
        out = cutout(img, frac, np.random.default_rng(W))
        painted = np.all(out == 0.5, axis=-1).sum()
        assert painted == int(np.floor(frac * W)) ** 2


def test_same_key_same_output(shapes):
    maker = ViewMaker(7, strong_policy=AugmentPolicy(kind="strong", pre_weak=True))
    a = maker.views(shapes.X[:6], shapes.ids[:6], STRONG, stream=2, step=11)
    b = maker.views(shapes.X[:6], shapes.ids[:6], STRONG, stream=2, step=11)
    np.testing.assert_array_equal(a, b)
    # batch composition does not matter: sample 3 alone gives its own row
    alone = maker.views(shapes.X[3:4], shapes.ids[3:4], STRONG, stream=2, step=11)
    np.testing.assert_array_equal(alone[0], a[3])
    c = maker.views(shapes.X[:6], shapes.ids[:6], STRONG, stream=2, step=12)
    assert not np.array_equal(a, c)


def test_original_view_is_flattened_payload(shapes):
    out = ViewMaker(0).views(shapes.X[:3], shapes.ids[:3], ORIGINAL)
    np.testing.assert_array_equal(out, shapes.X[:3].reshape(3, -1))


@pytest.mark.parametrize(
    "strong_policy",
    [
        AugmentPolicy(kind="strong"),
        AugmentPolicy(kind="strong", magnitude=5.0, cutout=0.25, pre_weak=True),
    ],
    ids=["full", "mild"],
)
def test_weak_is_weaker_than_strong(shapes, strong_policy):
    r = np.random.default_rng(11)
    dw, ds = [], []
    for k in range(1000):
        x = shapes.X[k % len(shapes)]
        dw.append(np.linalg.norm(weak_payload(x, r) - x))
        ds.append(np.linalg.norm(strong_payload(x, r, strong_policy) - x))
    assert np.mean(dw) < np.mean(ds)


def test_vector_views_respect_order(rng):
    x = rng.uniform(size=(1000, 12))
    r = np.random.default_rng(0)
    dw = np.mean([np.linalg.norm(weak_payload(v, r) - v) for v in x])
    ds = np.mean([np.linalg.norm(strong_payload(v, r) - v) for v in x])
    assert dw < ds


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(kind="medium")
    with pytest.raises(ValueError):
        AugmentPolicy(ops=("blur",))
    with pytest.raises(ValueError):
        AugmentPolicy(magnitude=11)
    with pytest.raises(ValueError):
        AugmentPolicy(cutout=1.0)


def test_sample_rng_keys_are_distinct():
    draws = {sample_rng(0, 1, 2, i, v).random() for i in range(5) for v in (WEAK, STRONG)}
    assert len(draws) == 10
    assert strong(Sample(1, np.zeros(4)), sample_rng(0, 0, 0, 1, STRONG)).label is None
