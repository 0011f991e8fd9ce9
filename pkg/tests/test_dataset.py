import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripletclass import dataset as ds
from tripletclass.errors import ConfigurationError, DataError, ValidationError

from .conftest import write_image


def test_scan_counts_and_lexicographic_classes(small_tree):
    m = ds.scan_dataset(small_tree, (16, 16, 3))
    assert len(m.records) == 12
    assert [(c.index, c.name) for c in m.classes] == [(0, "lung_aca"), (1, "lung_n"), (2, "lung_scc")]
    assert all(r.split == ds.TRAIN for r in m.records)
    assert m.class_counts() == {"lung_aca": 4, "lung_n": 4, "lung_scc": 4}


def test_scan_orders_b_a_c(tmp_path):
    for name in ("b", "a", "c"):
        write_image(tmp_path / name / "x.png", np.zeros((8, 8, 3)))
    m = ds.scan_dataset(tmp_path, (8, 8, 3))
    assert {c.name: c.index for c in m.classes} == {"a": 0, "b": 1, "c": 2}


def test_scan_errors(tmp_path, small_tree):
    with pytest.raises(ConfigurationError):
        ds.scan_dataset(tmp_path / "missing", (16, 16, 3))
    (small_tree / "empty_class").mkdir()
    with pytest.raises(ValidationError, match="empty_class"):
        ds.scan_dataset(small_tree, (16, 16, 3))
    (small_tree / "empty_class").rmdir()
    bad = small_tree / "lung_n" / "broken.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(ValidationError, match="broken.png"):
        ds.scan_dataset(small_tree, (16, 16, 3))


def test_scan_needs_two_classes(tmp_path):
    write_image(tmp_path / "only" / "x.png", np.zeros((8, 8, 3)))
    with pytest.raises(ValidationError):
        ds.scan_dataset(tmp_path, (8, 8, 3))


def test_split_exact_division(tmp_path):
    for name in ("a", "b", "c"):
        for i in range(10):
            write_image(tmp_path / name / f"{i}.png", np.full((8, 8, 3), i))
    m = ds.split(ds.scan_dataset(tmp_path, (8, 8, 3)), 0.8, seed=3)
    assert m.class_counts("train") == {"a": 8, "b": 8, "c": 8}
    assert m.class_counts("validation") == {"a": 2, "b": 2, "c": 2}
    again = ds.split(ds.scan_dataset(tmp_path, (8, 8, 3)), 0.8, seed=3)
    assert again.to_json() == m.to_json()


def test_split_ratio_errors(small_tree):
    m = ds.scan_dataset(small_tree, (16, 16, 3))
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            ds.split(m, bad, 0)


def test_train_count_lc25000_scale():
    # 5000 per class x 3 classes at 80 %
    assert 3 * ds.train_count(5000, 0.8) == 12000
    assert 3 * (5000 - ds.train_count(5000, 0.8)) == 3000


@given(n=st.integers(1, 200), ratio=st.floats(0.01, 0.99))
def test_train_count_properties(n, ratio):
    t = ds.train_count(n, ratio)
    assert abs(t - ratio * n) <= 1
    if n >= 2:
        assert 1 <= t <= n - 1


@settings(max_examples=25, deadline=None)
@given(sizes=st.lists(st.integers(1, 12), min_size=2, max_size=4), ratio=st.floats(0.1, 0.9), seed=st.integers(0, 99))
def test_split_stratified_no_leak(sizes, ratio, seed):
    from pathlib import Path

    classes = tuple(ds.ClassLabel(i, f"c{i}") for i in range(len(sizes)))
    root = Path("/virtual")
    records = tuple(ds.ImageRecord(root / f"c{i}" / f"{j}.png", classes[i]) for i, n in enumerate(sizes) for j in range(n))
    m = ds.DatasetManifest(root, records, classes, (8, 8, 3))
    s = ds.split(m, ratio, seed)
    train = {r.path for r in s.select(ds.TRAIN)}
    val = {r.path for r in s.select(ds.VALIDATION)}
    assert not train & val and len(train | val) == len(records)
    for c, n in zip(classes, sizes):
        n_train = s.class_counts(ds.TRAIN)[c.name]
        assert abs(n_train / n - ratio) <= 1 / n
        if n >= 2:
            assert 0 < n_train < n
    assert ds.split(m, ratio, seed).to_json() == s.to_json()


def test_manifest_json_roundtrip(small_tree, tmp_path):
    m = ds.split(ds.scan_dataset(small_tree, (16, 16, 3)), 0.75, 1)
    path = m.save(tmp_path / "manifest.json")
    doc = json.loads(path.read_text())
    assert set(doc) == {"root", "image_size", "seed", "split_ratio", "classes", "records"}
    assert not any(r["path"].startswith("/") for r in doc["records"])
    loaded = ds.DatasetManifest.load(path)
    assert loaded.to_json() == m.to_json()
    assert loaded.digest() == m.digest()


def test_load_image_resizes(tmp_path):
    path = write_image(tmp_path / "big.png", np.random.default_rng(0).integers(0, 256, (96, 80, 3)))
    img = ds.load_image(path, (32, 32, 3))
    assert img.shape == (32, 32, 3) and img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
    np.testing.assert_array_equal(img, ds.load_image(path, (32, 32, 3)))
    assert ds.load_image(path, (32, 32, 3), "float16").dtype == np.float16


def test_load_image_768_to_128(tmp_path):
    path = write_image(tmp_path / "tile.jpg", np.full((768, 768, 3), 128))
    assert ds.load_image(path, (128, 128, 3)).shape == (128, 128, 3)


def test_load_image_identity_and_black(tmp_path):
    pixels = np.random.default_rng(1).integers(0, 256, (16, 16, 3)).astype(np.uint8)
    path = write_image(tmp_path / "same.png", pixels)
    np.testing.assert_array_equal(ds.load_image(path, (16, 16, 3)), pixels.astype(np.float32) / 255.0)
    black = write_image(tmp_path / "black.png", np.zeros((20, 20, 3)))
    assert not ds.load_image(black, (10, 10, 3)).any()


def test_load_image_grayscale_and_decode_error(tmp_path):
    path = write_image(tmp_path / "rgb.png", np.full((8, 8, 3), 255))
    assert ds.load_image(path, (8, 8, 1)).shape == (8, 8, 1)
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"\x89PNG garbage")
    with pytest.raises(DataError) as info:
        ds.load_image(bad, (8, 8, 3))
    assert info.value.path == bad


# -- augmentation -----------------------------------------------------------

@pytest.fixture
def square_image():
    return np.random.default_rng(5).random((6, 6, 3)).astype(np.float32)


def test_flip_involutions(square_image):
    np.testing.assert_array_equal(ds.horizontal_flip(ds.horizontal_flip(square_image)), square_image)
    np.testing.assert_array_equal(ds.vertical_flip(ds.vertical_flip(square_image)), square_image)


def test_rotations_are_inverse(square_image):
    np.testing.assert_array_equal(ds.rotate_right(ds.rotate_left(square_image)), square_image)
    np.testing.assert_array_equal(ds.rotate_left(ds.rotate_right(square_image)), square_image)
    # counter-clockwise: top-right corner moves to top-left
    np.testing.assert_array_equal(ds.rotate_left(square_image)[0, 0], square_image[0, -1])


@pytest.mark.parametrize("op", sorted(ds.AUGMENT_OPS))
def test_augment_ops_preserve_histogram(op, square_image):
    out = ds.AUGMENT_OPS[op](square_image)
    assert out.shape == square_image.shape
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(square_image, axis=None))
    assert out.sum(dtype=np.float64) == square_image.sum(dtype=np.float64)


def test_augment_choices_follow_probabilities(square_image):
    cfg = ds.AugmentConfig({"identity": 0.0, "horizontal_flip": 1.0})
    out = ds.augment(square_image, np.random.default_rng(0), cfg)
    np.testing.assert_array_equal(out, ds.horizontal_flip(square_image))
    picks = Counter(ds.AugmentConfig().choose(np.random.default_rng(0), size=5000))
    assert set(picks) == set(ds.AUGMENT_OPS)
    assert all(abs(v / 5000 - 0.2) < 0.03 for v in picks.values())


def test_rotation_on_non_square_rejected():
    img = np.zeros((4, 6, 3), dtype=np.float32)
    with pytest.raises(ConfigurationError):
        ds.augment(img, np.random.default_rng(0))
    flips = ds.AugmentConfig({"horizontal_flip": 0.5, "vertical_flip": 0.5})
    assert ds.augment(img, np.random.default_rng(0), flips).shape == img.shape


# -- batching ---------------------------------------------------------------

def _manifest(small_tree):
    return ds.scan_dataset(small_tree, (16, 16, 3))


def test_partial_batch(small_tree):
    batches = list(ds.batch_iterator(_manifest(small_tree), ds.TRAIN, 18, 0))
    assert len(batches) == 1
    x, y = batches[0]
    assert x.shape == (12, 16, 16, 3) and y.shape == (12,)


def test_batches_cover_split(small_tree):
    batches = list(ds.batch_iterator(_manifest(small_tree), ds.TRAIN, 4, 0))
    assert [len(y) for _, y in batches] == [4, 4, 4]
    labels = np.concatenate([y for _, y in batches])
    assert Counter(labels.tolist()) == {0: 4, 1: 4, 2: 4}


def test_epoch_reshuffle(small_tree):
    m = _manifest(small_tree)

    def flat(epoch):
        return np.concatenate([x.reshape(len(x), -1) for x, _ in ds.batch_iterator(m, ds.TRAIN, 5, 7, epoch=epoch)])

    e0, e0_again, e1 = flat(0), flat(0), flat(1)
    np.testing.assert_array_equal(e0, e0_again)
    assert not np.array_equal(e0, e1)
    key = lambda a: sorted(map(bytes, a))
    assert key(e0) == key(e1)


def test_worker_count_does_not_change_stream(small_tree):
    m = _manifest(small_tree)
    aug = ds.AugmentConfig()
    serial = list(ds.batch_iterator(m, ds.TRAIN, 5, 3, augment_config=aug))
    threaded = list(ds.batch_iterator(m, ds.TRAIN, 5, 3, augment_config=aug, num_workers=3))
    for (xa, ya), (xb, yb) in zip(serial, threaded):
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_empty_split_and_bad_batch_size(small_tree):
    m = _manifest(small_tree)
    with pytest.raises(ValidationError):
        next(ds.batch_iterator(m, ds.VALIDATION, 4, 0))
    with pytest.raises(ConfigurationError):
        next(ds.batch_iterator(m, ds.TRAIN, 0, 0))
