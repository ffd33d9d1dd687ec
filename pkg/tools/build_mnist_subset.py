"""Write a small MNIST sample in IDX format to ``data/mnist-5k``.

Source: the 5000-image MNIST sample shipped inside the ``mlxtend`` wheel
(``mlxtend/data/data/mnist_5k.csv.gz``; 784 pixel columns then the label).
The rows are shuffled with a fixed seed and split into 3000 training and
2000 test images, written under the standard MNIST file names (gzipped).

Usage::

    pip download --no-deps mlxtend -d /tmp/wheels
    python tools/build_mnist_subset.py /tmp/wheels/mlxtend-*.whl
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from areafl.data import write_idx

OUT = Path(__file__).resolve().parents[1] / "data" / "mnist-5k"


def main(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(20240601).permutation(len(labels))
    images, labels = images[order], labels[order]
    OUT.mkdir(parents=True, exist_ok=True)
    write_idx(OUT / "train-images-idx3-ubyte.gz", OUT / "train-labels-idx1-ubyte.gz",
              images[:3000], labels[:3000], compress=True)
    write_idx(OUT / "t10k-images-idx3-ubyte.gz", OUT / "t10k-labels-idx1-ubyte.gz",
              images[3000:], labels[3000:], compress=True)


if __name__ == "__main__":
    main(sys.argv[1])
