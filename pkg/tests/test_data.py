import gzip
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DATA_DIR
from spincim.data import gen_synthetic, load_idx, parse_idx, parse_idx_raw, save_idx, two_moons_arcs, write_idx
from spincim.errors import DomainError, ParseError

DTYPES = [np.uint8, np.int8, np.int16, np.int32, np.float32, np.float64]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(DTYPES), st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(0, 2 ** 31 - 1))
def test_idx_round_trip(dtype, shape, seed):
    rng = np.random.default_rng(seed)
    arr = (rng.standard_normal(shape) * 50).astype(dtype)
    back = parse_idx_raw(write_idx(arr))
    assert back.dtype == np.dtype(dtype) and back.shape == tuple(shape)
    np.testing.assert_array_equal(back, arr)


def test_idx_header_layout():
    raw = write_idx(np.array([[1, 2, 3]], dtype=np.uint8))
    assert raw[:4] == b"\x00\x00\x08\x02"
    assert struct.unpack(">II", raw[4:12]) == (1, 3)
    assert raw[12:] == b"\x01\x02\x03"


def test_parse_conventions():
    labels = parse_idx(write_idx(np.array([3, 1, 4], dtype=np.uint8)))
    assert labels.dtype == np.int64 and labels.tolist() == [3, 1, 4]
    imgs = parse_idx(write_idx(np.array([[0, 255]], dtype=np.uint8)))
    assert imgs.dtype == np.float64 and imgs.tolist() == [[0.0, 1.0]]
    assert write_idx(np.array([1, 300]))[2] == 0x0C  # int64 too large for ubyte goes to int32


@pytest.mark.parametrize("raw, offset", [
    (b"\x00\x00", 2),
    (b"\x01\x00\x08\x01\x00\x00\x00\x01\x05", 0),
    (b"\x00\x00\x07\x01\x00\x00\x00\x01\x05", 2),
    (b"\x00\x00\x08\x00", 3),
    (b"\x00\x00\x08\x02\x00\x00\x00\x01", 8),
    (b"\x00\x00\x08\x01\x00\x00\x00\x03\x05", 9),
    (b"\x00\x00\x08\x01\x00\x00\x00\x01\x05\x06", 9),
])
def test_malformed_idx_reports_offset(raw, offset):
    with pytest.raises(ParseError) as info:
        parse_idx_raw(raw)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_gzip_and_plain_files(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    save_idx(tmp_path / "a.idx", arr)
    (tmp_path / "a.idx.gz").write_bytes(gzip.compress(write_idx(arr)))
    np.testing.assert_array_equal(load_idx(tmp_path / "a.idx"), load_idx(tmp_path / "a.idx.gz"))


def test_bundled_mnist_subset():
    x = load_idx(os.path.join(DATA_DIR, "mnist1k-train-images-idx3-ubyte.gz"))
    y = load_idx(os.path.join(DATA_DIR, "mnist1k-train-labels-idx1-ubyte.gz"))
    assert x.shape == (1000, 28, 28) and y.shape == (1000,)
    assert np.bincount(y).tolist() == [100] * 10
    assert 0.0 <= x.min() and x.max() <= 1.0
    xt = load_idx(os.path.join(DATA_DIR, "mnist1k-t10k-images-idx3-ubyte.gz"))
    assert xt.shape[1:] == (28, 28)


def test_synthetic_sets():
    x, y = gen_synthetic("two_moons", 101, 0.1, seed=3)
    assert x.shape == (101, 2) and np.bincount(y).tolist() == [50, 51]
    x2, y2 = gen_synthetic("two_moons", 101, 0.1, seed=3)
    np.testing.assert_array_equal(x, x2)
    clean, yc = gen_synthetic("two_moons", 40, 0.0, seed=0, shuffle=False)
    outer, inner = two_moons_arcs(20, 20)
    np.testing.assert_array_equal(clean, np.concatenate([outer, inner]))
    np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0)
    b, yb = gen_synthetic("blobs", 10, 0.0, seed=0, shuffle=False)
    assert np.all(b[yb == 0] == -2.0) and np.all(b[yb == 1] == 2.0)
    with pytest.raises(DomainError):
        gen_synthetic("spirals", 10)
    with pytest.raises(DomainError):
        gen_synthetic("blobs", 1)
