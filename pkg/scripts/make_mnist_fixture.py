"""Build the small MNIST IDX fixtures used by the tests.

Source: the 5000-image MNIST subset (500 per digit) shipped as
``mlxtend/data/data/mnist_5k.csv.gz`` in the mlxtend wheel (BSD-3). Each CSV
row holds 784 pixel values (0-255) followed by the label.

A stratified split takes 100 train and 100 test images per digit, shuffled
with a fixed seed, and writes gzip-compressed IDX files:

    python scripts/make_mnist_fixture.py path/to/mnist_5k.csv.gz tests/data
"""

import gzip
import os
import sys

import numpy as np

from spincim.data import write_idx


def main(src, out_dir, per_class=100, seed=0):
    table = np.genfromtxt(src, delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for d in range(10):
        idx = rng.permutation(np.flatnonzero(labels == d))
        train_idx.extend(idx[:per_class])
        test_idx.extend(idx[per_class:2 * per_class])
    os.makedirs(out_dir, exist_ok=True)
    for name, idx in (("train", train_idx), ("t10k", test_idx)):
        idx = rng.permutation(np.array(idx))
        for kind, arr in (("images-idx3-ubyte", pixels[idx]), ("labels-idx1-ubyte", labels[idx])):
            path = os.path.join(out_dir, f"mnist1k-{name}-{kind}.gz")
            with gzip.GzipFile(path, "wb", mtime=0) as fh:
                fh.write(write_idx(arr))
            print(path, arr.shape)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
