#!/usr/bin/env python3
"""Convert the 10k MNIST digits shipped in the `mnist` npm package into IDX files.

Usage: npm pack mnist && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist10k

The package stores pixels as floats rounded to three decimals, which is enough
to recover the original bytes exactly (max error 0.0005 * 255 < 0.5).
Samples are interleaved with a fixed permutation so that any prefix/suffix
split is class-balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        doc = json.loads((src / f"{digit}.json").read_text())
        flat = np.asarray(doc["data"], dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(flat * 255.0).astype(np.uint8))
        labels.append(np.full(len(flat), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20160608).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "t10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(dst / "t10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
