import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semisup.container import ContainerError, read_container, write_container
from semisup.data import (
    Dataset,
    IngestionError,
    SplitSpec,
    UnlabeledSet,
    encode_idx_images,
    encode_idx_labels,
    gen_blobs,
    gen_shapes,
    load_dataset,
    load_idx,
    parse_idx_images,
    parse_idx_labels,
    save_dataset,
    shape_mask,
    split,
)


# ---------------------------------------------------------------- IDX fixture

def fixture_images():
    """Four 28x28 images: blank, full, a diagonal and a 10x10 box."""
    imgs = np.zeros((4, 28, 28), dtype=np.uint8)
    imgs[1] = 255
    imgs[2][np.arange(28), np.arange(28)] = 200
    imgs[3, 9:19, 9:19] = 17
    return imgs


def fixture_bytes():
    imgs = fixture_images()
    images = b"\x00\x00\x08\x03" + (4).to_bytes(4, "big") + (28).to_bytes(4, "big") * 2 + imgs.tobytes()
    labels = b"\x00\x00\x08\x01" + (4).to_bytes(4, "big") + bytes([7, 0, 9, 3])
    return images, labels


@pytest.fixture
def idx_files(tmp_path):
    images, labels = fixture_bytes()
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(images)
    lp.write_bytes(labels)
    return ip, lp


def test_idx_fixture_loads(idx_files):
    ds = load_idx(*idx_files)
    assert len(ds) == 4 and ds.sample_shape == (28, 28, 1)
    np.testing.assert_array_equal(ds.y, [7, 0, 9, 3])
    np.testing.assert_array_equal(np.round(ds.X[..., 0] * 255).astype(np.uint8), fixture_images())
    assert ds.X[1].max() == 1.0 and ds.X[0].max() == 0.0


def test_idx_encoders_roundtrip_bit_exact():
    images, labels = fixture_bytes()
    assert encode_idx_images(parse_idx_images(images)) == images
    assert encode_idx_labels(parse_idx_labels(labels)) == labels


def test_idx_bad_magic_reports_offset():
    images, labels = fixture_bytes()
    with pytest.raises(IngestionError) as err:
        parse_idx_images(b"\x00\x00\x08\x01" + images[4:])
    assert err.value.offset == 0
    with pytest.raises(IngestionError):
        parse_idx_labels(images)


@pytest.mark.parametrize("cut", [0, 3, 10, 16, 100, 4 * 784 + 15])
def test_idx_truncation_reports_offset(cut):
    images, _ = fixture_bytes()
    with pytest.raises(IngestionError) as err:
        parse_idx_images(images[:cut])
    assert err.value.offset == cut
    assert f"offset {cut}" in str(err.value)


def test_idx_label_out_of_range():
    _, labels = fixture_bytes()
    bad = labels[:10] + bytes([12]) + labels[11:]
    with pytest.raises(IngestionError) as err:
        parse_idx_labels(bad)
    assert err.value.offset == 10


def test_idx_empty_file_and_count_mismatch(tmp_path, idx_files):
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(IngestionError):
        load_idx(empty, idx_files[1])
    short = tmp_path / "short"
    short.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", 3) + bytes([1, 2, 3]))
    with pytest.raises(IngestionError):
        load_idx(idx_files[0], short)


# ---------------------------------------------------------------- generators

def test_shapes_one_per_class():
    ds = gen_shapes(1, rng=0)
    assert len(ds) == 3 and sorted(ds.y.tolist()) == [0, 1, 2]
    assert ds.sample_shape == (32, 32, 3)


@pytest.mark.parametrize("variant", ["fill-color", "border-color"])
def test_shapes_deterministic_and_distinguishable(variant):
    a, b = gen_shapes(30, variant=variant, rng=9), gen_shapes(30, variant=variant, rng=9)
    np.testing.assert_array_equal(a.X, b.X)
    assert a.X.min() >= 0 and a.X.max() <= 1
    means = [a.X[a.y == c].mean(axis=0) for c in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.linalg.norm(means[i] - means[j]) > 0


def test_border_variant_is_a_subset_of_fill():
    fill = gen_shapes(5, variant="fill-color", rng=4)
    border = gen_shapes(5, variant="border-color", rng=4)
    lit_fill = fill.X.max(axis=-1) > 0
    lit_border = border.X.max(axis=-1) > 0
    assert np.all(lit_fill | ~lit_border)
    assert lit_border.sum() < lit_fill.sum()


def test_shape_masks_have_expected_areas():
    size, r = 200, 60.0
    c = size / 2
    areas = [shape_mask(k, size, c, c, r).sum() for k in range(3)]
    expected = [np.pi * r**2, 3 * np.sqrt(3) / 4 * r**2, 5 / 2 * r**2 * np.sin(2 * np.pi / 5)]
    np.testing.assert_allclose(areas, expected, rtol=0.02)


def test_shapes_rejects_tiny_canvas():
    with pytest.raises(ValueError):
        gen_shapes(2, size=8)


def test_blobs_centroid_oracle_is_perfect():
    ds = gen_blobs(50, 4, 6, separation=0.5, rng=2, sigma=0.03)
    centroids = np.stack([ds.X[ds.y == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((ds.X[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    np.testing.assert_array_equal(pred, ds.y)


def test_blobs_single_class_and_determinism():
    ds = gen_blobs(7, 1, 3, rng=0)
    assert set(ds.y.tolist()) == {0}
    np.testing.assert_array_equal(gen_blobs(9, 3, 4, rng=5).X, gen_blobs(9, 3, 4, rng=5).X)
    with pytest.raises(ValueError):
        gen_blobs(3, 50, 1, separation=0.5)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), [0, 1], [0, 0], 2, "blobs")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), [0, 2], [0, 1], 2, "blobs")


# ---------------------------------------------------------------- container

def test_container_roundtrip_and_byte_stability(tmp_path):
    ds = gen_shapes(3, rng=1)
    p1, p2 = tmp_path / "a.ssds", tmp_path / "b.ssds"
    save_dataset(ds, p1)
    save_dataset(gen_shapes(3, rng=1), p2)
    assert hashlib.sha256(p1.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()
    back = load_dataset(p1)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.kind == "shapes" and back.n_classes == 3


def test_container_rejects_corruption(tmp_path):
    p = tmp_path / "c.bin"
    write_container(p, b"TEST", {"k": 1}, {"a": np.arange(10.0)})
    meta, arrays = read_container(p, b"TEST")
    assert meta == {"k": 1}
    with pytest.raises(ContainerError):
        read_container(p, b"NOPE")
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(ContainerError, match="truncated"):
        read_container(p, b"TEST")


# ---------------------------------------------------------------- splits

def test_split_sizes_partition_and_repeatability():
    ds = gen_blobs(40, 3, 4, rng=0)
    sp = split(ds, SplitSpec(4, test_fraction=0.25, seed=3))
    assert len(sp.labeled) == 12
    np.testing.assert_array_equal(np.bincount(sp.labeled.y), [4, 4, 4])
    parts = [set(sp.labeled.ids.tolist()), set(sp.unlabeled.ids.tolist()), set(sp.test.ids.tolist())]
    assert set.union(*parts) == set(ds.ids.tolist())
    assert sum(len(p) for p in parts) == len(ds)
    again = split(ds, SplitSpec(4, test_fraction=0.25, seed=3))
    np.testing.assert_array_equal(again.unlabeled.ids, sp.unlabeled.ids)
    np.testing.assert_array_equal(again.test.ids, sp.test.ids)


def test_unlabeled_set_carries_no_labels():
    sp = split(gen_blobs(20, 2, 3, rng=0), SplitSpec(2))
    assert isinstance(sp.unlabeled, UnlabeledSet)
    assert not hasattr(sp.unlabeled, "y")


def test_split_options():
    ds = gen_shapes(304, rng=0)
    sp = split(ds, SplitSpec(4, seed=0, test_per_class=100, unlabeled_per_class=200))
    assert (len(sp.labeled), len(sp.unlabeled), len(sp.test)) == (12, 600, 300)
    inc = split(ds, SplitSpec(4, seed=0, test_per_class=100, unlabeled_per_class=200, include_labeled_in_unlabeled=True))
    assert set(inc.labeled.ids.tolist()) <= set(inc.unlabeled.ids.tolist())
    with pytest.raises(ValueError):
        split(gen_blobs(5, 2, 3, rng=0), SplitSpec(5))


@given(st.integers(1, 5), st.integers(0, 1000), st.floats(0.0, 0.5))
def test_split_is_class_balanced(lpc, seed, frac):
    ds = gen_blobs(12, 3, 4, rng=1)
    sp = split(ds, SplitSpec(lpc, test_fraction=frac, seed=seed))
    np.testing.assert_array_equal(np.bincount(sp.labeled.y, minlength=3), [lpc] * 3)
    assert not set(sp.test.ids.tolist()) & set(sp.labeled.ids.tolist())
