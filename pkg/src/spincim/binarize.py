"""Binarization with straight-through gradients and XNOR-popcount arithmetic."""

import numpy as np

from . import _kernels
from .errors import DimensionError, NumericError
from .tensor import Tensor, as_tensor


def binarize(latent):
    """+1 where latent >= 0, else -1 (ties go to +1)."""
    data = latent.data if isinstance(latent, Tensor) else np.asarray(latent, dtype=np.float64)
    if np.isnan(data).any():
        raise NumericError("cannot binarize NaN entries")
    return np.where(data >= 0, 1.0, -1.0)


def ste_backward(grad_out, latent, clip=1.0):
    """Pass the gradient through where |latent| <= clip, zero it elsewhere."""
    latent = np.asarray(latent)
    return np.where(np.abs(latent) <= clip, grad_out, 0.0)


def sign_ste(x, clip=1.0):
    """Binarize in the forward pass, straight-through estimator in the backward pass."""
    a = as_tensor(x)
    return Tensor._make(binarize(a.data), (a,), lambda g: (ste_backward(g, a.data, clip),))


def pack_bits(bits):
    """Pack a (..., N) array of {0, 1} into (..., ceil(N/64)) little-endian uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.shape[-1]
    words = (n + 63) // 64
    padded = np.zeros(bits.shape[:-1] + (words * 64,), dtype=np.uint8)
    padded[..., :n] = bits
    packed = np.packbits(padded, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8")


def to_bits(values):
    """Map +-1 values to bits via b = (v + 1) / 2."""
    return (np.asarray(values) > 0).astype(np.uint8)


def xnor_popcount_dot(x_bits, w_bits):
    """+-1 dot product of two bit sequences: 2 * popcount(XNOR(x, w)) - N."""
    x_bits = np.asarray(x_bits, dtype=np.uint8).reshape(-1)
    w_bits = np.asarray(w_bits, dtype=np.uint8).reshape(-1)
    if x_bits.size != w_bits.size:
        raise DimensionError(f"bit sequences differ in length: {x_bits.size} vs {w_bits.size}")
    n = x_bits.size
    if n == 0:
        return 0
    return int(_kernels.xnor_popcount(pack_bits(x_bits)[None, :], pack_bits(w_bits)[None, :], n)[0, 0])


def xnor_matmul(x_pm, w_pm):
    """Batched +-1 products through the packed kernel.

    x_pm: (N, D) and w_pm: (D, C) with entries in {-1, +1}; returns (N, C) int64.
    """
    x_pm, w_pm = np.asarray(x_pm), np.asarray(w_pm)
    if x_pm.shape[1] != w_pm.shape[0]:
        raise DimensionError(f"axis 1 of x ({x_pm.shape[1]}) does not match axis 0 of w ({w_pm.shape[0]})")
    n = x_pm.shape[1]
    return _kernels.xnor_popcount(pack_bits(to_bits(x_pm)), pack_bits(to_bits(w_pm.T)), n)
