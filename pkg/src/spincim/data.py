"""IDX container I/O and synthetic proxy datasets."""

import gzip
import struct

import numpy as np

from .errors import DomainError, ParseError
from .rng import as_generator

# IDX type byte -> (numpy big-endian dtype, itemsize)
IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_TYPE_OF = {np.dtype("u1"): 0x08, np.dtype("i1"): 0x09, np.dtype("i2"): 0x0B, np.dtype("i4"): 0x0C,
            np.dtype("f4"): 0x0D, np.dtype("f8"): 0x0E}


def parse_idx_raw(buf):
    """Decode an IDX container into an array with its stored dtype (native byte order)."""
    buf = memoryview(bytes(buf))
    if len(buf) < 4:
        raise ParseError(f"header needs 4 bytes, got {len(buf)}", offset=len(buf))
    if buf[0] != 0 or buf[1] != 0:
        raise ParseError(f"bad magic {bytes(buf[:4]).hex()}: first two bytes must be zero", offset=0)
    code, ndim = buf[2], buf[3]
    if code not in IDX_TYPES:
        raise ParseError(f"unknown IDX data type 0x{code:02x}", offset=2)
    if ndim == 0:
        raise ParseError("IDX rank must be at least 1", offset=3)
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise ParseError(f"truncated dimension table: expected {head} bytes, got {len(buf)}", offset=len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    dtype = IDX_TYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    have = len(buf) - head
    if have < need:
        raise ParseError(f"truncated payload: expected {need} bytes, got {have}", offset=len(buf))
    if have > need:
        raise ParseError(f"trailing data: expected {need} payload bytes, got {have}", offset=head + need)
    arr = np.frombuffer(buf[head:head + need], dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def parse_idx(buf):
    """IDX bytes -> array.

    Rank-1 integer files are label vectors (int64). Unsigned-byte files of
    higher rank are images scaled to [0, 1]. Float files are returned as float64.
    """
    arr = parse_idx_raw(buf)
    if arr.dtype.kind in "iu" and arr.ndim == 1:
        return arr.astype(np.int64)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def write_idx(arr):
    """Encode an array as IDX bytes (dtype kept; float64 written as double)."""
    arr = np.asarray(arr)
    if arr.dtype.kind in "iu" and arr.dtype.itemsize == 8:
        small = arr.size > 0 and arr.min() >= 0 and arr.max() <= 255
        arr = arr.astype(np.uint8) if small else arr.astype(np.int32)
    code = _TYPE_OF.get(np.dtype(arr.dtype.name))
    if code is None:
        raise DomainError(f"dtype {arr.dtype} has no IDX encoding")
    if arr.ndim < 1 or arr.ndim > 255:
        raise DomainError("IDX rank must lie in [1, 255]")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(IDX_TYPES[code]).tobytes()


def load_idx(path):
    """Read an IDX file; gzip-compressed files are recognized by their magic."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def save_idx(path, arr):
    with open(path, "wb") as fh:
        fh.write(write_idx(arr))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def two_moons_arcs(n_outer, n_inner):
    """Noise-free points on the two canonical half circles."""
    t_out = np.linspace(0.0, np.pi, n_outer)
    t_in = np.linspace(0.0, np.pi, n_inner)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    return outer, inner


def gen_synthetic(kind, n, noise=0.1, seed=0, shuffle=True):
    """Balanced 2-class dataset; returns (x (n, 2) float64, y (n,) int64).

    ``seed`` is an int or a SeedTree.
    """
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    if noise < 0:
        raise DomainError("noise must be nonnegative")
    rng = as_generator(seed)
    n0 = n // 2
    n1 = n - n0
    if kind == "two_moons":
        a, b = two_moons_arcs(n0, n1)
    elif kind == "blobs":
        a = np.tile([-2.0, -2.0], (n0, 1))
        b = np.tile([2.0, 2.0], (n1, 1))
    else:
        raise DomainError(f"unknown synthetic dataset {kind!r}")
    x = np.concatenate([a, b])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    if shuffle:
        order = rng.permutation(n)
        x, y = x[order], y[order]
    return x, y
