"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel is checked for identical output before timing. The first numba
call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from spincim import _kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    n_bits = 1024
    words = n_bits // 64
    xp = rng.integers(0, 2 ** 63, size=(256, words), dtype=np.uint64)
    wp = rng.integers(0, 2 ** 63, size=(128, words), dtype=np.uint64)
    x = np.sign(rng.standard_normal((512, 576)))
    weff = np.sign(rng.standard_normal((576, 128)))
    active = rng.random((512, 576)) > 0.2
    img = rng.standard_normal((16, 16, 16, 16))
    cols = _kernels.numpy_impl.im2col(img, 3, 1, 1)
    return {
        "xnor_popcount 256x128x1024b": lambda k: k.xnor_popcount(xp, wp, n_bits),
        "crossbar_mac 512x576x128": lambda k: k.crossbar_mac(x, weff, None),
        "crossbar_mac masked": lambda k: k.crossbar_mac(x, weff, active),
        "im2col 16x16x16x16 k3": lambda k: k.im2col(img, 3, 1, 1),
        "col2im 16x16x16x16 k3": lambda k: k.col2im(cols, img.shape, 3, 1, 1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        ref = call(_kernels.numpy_impl)
        got = call(_kernels.numba_impl)  # also triggers compilation
        same = all(np.array_equal(a, b) for a, b in zip(np.atleast_1d(ref) if not isinstance(ref, tuple) else ref,
                                                          np.atleast_1d(got) if not isinstance(got, tuple) else got))
        t_np = _time(lambda: call(_kernels.numpy_impl), args.repeat)
        t_nb = _time(lambda: call(_kernels.numba_impl), args.repeat)
        flag = "" if same else "  MISMATCH"
        print(f"{name:32s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}{flag}")


if __name__ == "__main__":
    main()
