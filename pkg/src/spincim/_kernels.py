"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical results. The numba path is
used unless ``SPINCIM_DISABLE_NUMBA`` is set to a truthy value or numba cannot
be imported. Both implementations stay importable (``numba_impl`` and
``numpy_impl``) so tests and the benchmark can compare them directly.
"""

import os
from types import SimpleNamespace

import numpy as np

_DISABLED = os.environ.get("SPINCIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _np_xnor_popcount(xp, wp, n_bits):
    """Packed XNOR-popcount products.

    xp: (N, words) uint64, wp: (C, words) uint64. Returns (N, C) int64 holding
    2*popcount(xnor) - n_bits, i.e. the +-1 dot product.
    """
    words = xp.shape[1]
    tail = n_bits - 64 * (words - 1)
    mask = np.full(words, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    if tail < 64:
        mask[-1] = np.uint64((1 << tail) - 1)
    same = ~(xp[:, None, :] ^ wp[None, :, :]) & mask
    ones = np.bitwise_count(same).sum(axis=-1, dtype=np.int64)
    return 2 * ones - n_bits


def _np_crossbar_mac(x, weff, active):
    if active is not None:
        x = np.where(active, x, 0.0)
    pos = np.maximum(x, 0.0) @ weff
    neg = np.maximum(-x, 0.0) @ weff
    return pos, neg


def _np_im2col(x, k, pad, stride):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # rows ordered (n, oh, ow); columns ordered (c, ki, kj)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def _np_col2im(cols, shape, k, pad, stride):
    n, c, h, w = shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


numpy_impl = SimpleNamespace(
    xnor_popcount=_np_xnor_popcount,
    crossbar_mac=_np_crossbar_mac,
    im2col=_np_im2col,
    col2im=_np_col2im,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _popcount64(v):
        v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
        v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
        v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
        return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)

    @njit(cache=True)
    def _nb_xnor_popcount_core(xp, wp, n_bits):
        n, words = xp.shape
        c = wp.shape[0]
        tail = n_bits - 64 * (words - 1)
        last_mask = np.uint64(0xFFFFFFFFFFFFFFFF)
        if tail < 64:
            last_mask = (np.uint64(1) << np.uint64(tail)) - np.uint64(1)
        out = np.empty((n, c), dtype=np.int64)
        for i in range(n):
            for j in range(c):
                ones = np.uint64(0)
                for k in range(words - 1):
                    ones += _popcount64(~(xp[i, k] ^ wp[j, k]))
                ones += _popcount64(~(xp[i, words - 1] ^ wp[j, words - 1]) & last_mask)
                out[i, j] = 2 * np.int64(ones) - n_bits
        return out

    @njit(cache=True)
    def _nb_crossbar_mac_core(x, weff, active, use_active):
        p_count, rows = x.shape
        cols = weff.shape[1]
        pos = np.zeros((p_count, cols))
        neg = np.zeros((p_count, cols))
        for p in range(p_count):
            for r in range(rows):
                if use_active and not active[p, r]:
                    continue
                v = x[p, r]
                if v > 0.0:
                    for j in range(cols):
                        pos[p, j] += v * weff[r, j]
                elif v < 0.0:
                    for j in range(cols):
                        neg[p, j] -= v * weff[r, j]
        return pos, neg

    @njit(cache=True)
    def _nb_im2col_core(x, k, stride, ho, wo):
        n, c = x.shape[0], x.shape[1]
        out = np.empty((n * ho * wo, c * k * k), dtype=x.dtype)
        for b in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    r = (b * ho + oi) * wo + oj
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[r, col] = x[b, ch, oi * stride + ki, oj * stride + kj]
                                col += 1
        return out

    @njit(cache=True)
    def _nb_col2im_core(cols, n, c, hp, wp, k, stride, ho, wo):
        out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        for b in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    r = (b * ho + oi) * wo + oj
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[b, ch, oi * stride + ki, oj * stride + kj] += cols[r, col]
                                col += 1
        return out

    def _nb_xnor_popcount(xp, wp, n_bits):
        return _nb_xnor_popcount_core(np.ascontiguousarray(xp, dtype=np.uint64),
                                      np.ascontiguousarray(wp, dtype=np.uint64), int(n_bits))

    def _nb_crossbar_mac(x, weff, active):
        x = np.ascontiguousarray(x, dtype=np.float64)
        weff = np.ascontiguousarray(weff, dtype=np.float64)
        if active is None:
            return _nb_crossbar_mac_core(x, weff, np.ones((1, 1), dtype=np.bool_), False)
        return _nb_crossbar_mac_core(x, weff, np.ascontiguousarray(active, dtype=np.bool_), True)

    def _nb_im2col(x, k, pad, stride):
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        x = np.ascontiguousarray(x)
        ho = (x.shape[2] - k) // stride + 1
        wo = (x.shape[3] - k) // stride + 1
        return _nb_im2col_core(x, k, stride, ho, wo)

    def _nb_col2im(cols, shape, k, pad, stride):
        n, c, h, w = shape
        hp, wp = h + 2 * pad, w + 2 * pad
        ho = (hp - k) // stride + 1
        wo = (wp - k) // stride + 1
        out = _nb_col2im_core(np.ascontiguousarray(cols), n, c, hp, wp, k, stride, ho, wo)
        if pad:
            out = out[:, :, pad:pad + h, pad:pad + w]
        return out

    numba_impl = SimpleNamespace(
        xnor_popcount=_nb_xnor_popcount,
        crossbar_mac=_nb_crossbar_mac,
        im2col=_nb_im2col,
        col2im=_nb_col2im,
    )
else:  # pragma: no cover
    numba_impl = None


_active = numba_impl if USE_NUMBA else numpy_impl

xnor_popcount = _active.xnor_popcount
# Dense MACs go to BLAS either way: the compiled loop is slower than matmul at
# every size in benchmarks/bench_kernels.py. The numba twin stays for parity checks.
crossbar_mac = numpy_impl.crossbar_mac
im2col = _active.im2col
col2im = _active.col2im
