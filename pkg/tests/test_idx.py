"""IDX container and dataset-splitting tests."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskedvae.idx import (
    IdxFormatError,
    ImageDataset,
    SplitSpec,
    load_dataset,
    load_pair,
    read_idx,
    split_train_val,
    write_idx,
)


def test_write_produces_documented_bytes(tmp_path):
    # 2x3 array: magic 00 00 08 02, dims 2 and 3 big-endian, then row-major data
    arr = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8)
    path = tmp_path / "a-idx2-ubyte"
    write_idx(path, arr)
    expected = bytes(
        [0, 0, 0x08, 2, 0, 0, 0, 2, 0, 0, 0, 3, 1, 2, 3, 4, 5, 6]
    )
    assert path.read_bytes() == expected


def test_read_rejects_malformed_headers(tmp_path):
    cases = {
        "empty": b"",
        "bad-zeros": bytes([1, 0, 0x08, 1, 0, 0, 0, 1, 7]),
        "bad-type": bytes([0, 0, 0x09, 1, 0, 0, 0, 1, 7]),
        "bad-ndim": bytes([0, 0, 0x08, 5]) + b"\x00" * 24,
        "short-dims": bytes([0, 0, 0x08, 2, 0, 0, 0, 1]),
        "short-payload": bytes([0, 0, 0x08, 1, 0, 0, 0, 4, 1, 2]),
        "trailing": bytes([0, 0, 0x08, 1, 0, 0, 0, 1, 7, 8]),
    }
    for name, blob in cases.items():
        path = tmp_path / name
        path.write_bytes(blob)
        with pytest.raises(IdxFormatError) as err:
            read_idx(path)
        assert "byte offset" in str(err.value)


def test_write_rejects_unsupported_rank(tmp_path):
    with pytest.raises(IdxFormatError):
        write_idx(tmp_path / "x", np.zeros((2, 2, 2, 2, 2), dtype=np.uint8))


@given(
    shape=st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_round_trip_preserves_data(tmp_path_factory, shape, seed):
    arr = np.random.default_rng(seed).integers(
        0, 256, size=tuple(shape), dtype=np.uint8
    )
    path = tmp_path_factory.mktemp("idx") / "arr"
    write_idx(path, arr)
    back = read_idx(path)
    assert back.dtype == np.uint8
    assert np.array_equal(back, arr)


def _write_pair(tmp_path, count=10, h=5, w=5, label_count=None):
    gen = np.random.default_rng(0)
    images = gen.integers(0, 256, size=(count, h, w), dtype=np.uint8)
    labels = (np.arange(label_count or count) % 10).astype(np.uint8)
    ip, lp = tmp_path / "imgs", tmp_path / "labels"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


def test_load_pair_scales_to_unit_interval(tmp_path):
    ip, lp, images, labels = _write_pair(tmp_path)
    ds = load_pair(ip, lp, "toy")
    assert ds.images.shape == (10, 5, 5, 1)
    assert ds.images.dtype == np.float32
    assert np.allclose(ds.images[..., 0], images / 255.0)
    assert np.array_equal(ds.labels, labels)
    assert ds.labels.dtype == np.int64


def test_load_pair_rejects_count_mismatch(tmp_path):
    ip, lp, _, _ = _write_pair(tmp_path, count=10, label_count=9)
    with pytest.raises(ValueError, match="images but"):
        load_pair(ip, lp, "toy")


def test_dataset_validates_shapes():
    with pytest.raises(ValueError, match="NHWC"):
        ImageDataset(np.zeros((3, 4, 4)), np.zeros(3, dtype=np.int64), "x")
    with pytest.raises(ValueError, match="labels"):
        ImageDataset(np.zeros((3, 4, 4, 1)), np.zeros(2, dtype=np.int64), "x")


def test_split_spec_rejects_negative_counts():
    with pytest.raises(ValueError):
        SplitSpec(train_count=-1, val_count=1, test_count=1, seed=0)


def _toy_dataset(n=20):
    images = np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1) / 255.0
    return ImageDataset(images, np.arange(n, dtype=np.int64) % 10, "toy")


def test_split_partitions_without_overlap():
    ds = _toy_dataset(20)
    train, val = split_train_val(ds, SplitSpec(14, 6, 0, seed=3))
    ids = lambda d: set(np.round(d.images[:, 0, 0, 0] * 255).astype(int))
    assert len(train) == 14 and len(val) == 6
    assert ids(train) | ids(val) == set(range(20))
    assert ids(train) & ids(val) == set()


def test_split_is_seeded_and_seed_sensitive():
    ds = _toy_dataset(20)
    a1, _ = split_train_val(ds, SplitSpec(10, 10, 0, seed=1))
    a2, _ = split_train_val(ds, SplitSpec(10, 10, 0, seed=1))
    b, _ = split_train_val(ds, SplitSpec(10, 10, 0, seed=2))
    assert np.array_equal(a1.images, a2.images)
    assert not np.array_equal(a1.images, b.images)


def test_split_requires_exact_cover():
    ds = _toy_dataset(20)
    with pytest.raises(ValueError, match="source has"):
        split_train_val(ds, SplitSpec(10, 5, 0, seed=0))


def test_load_dataset_carves_validation_and_checks_test_count(tmp_path):
    ip, lp, _, _ = _write_pair(tmp_path, count=10)
    tip, tlp = tmp_path / "timgs", tmp_path / "tlabels"
    gen = np.random.default_rng(1)
    write_idx(tip, gen.integers(0, 256, size=(4, 5, 5), dtype=np.uint8))
    write_idx(tlp, (np.arange(4) % 10).astype(np.uint8))

    train, val, test = load_dataset(ip, lp, tip, tlp, SplitSpec(7, 3, 4, seed=0))
    assert (len(train), len(val), len(test)) == (7, 3, 4)

    with pytest.raises(ValueError, match="test file has"):
        load_dataset(ip, lp, tip, tlp, SplitSpec(7, 3, 5, seed=0))
