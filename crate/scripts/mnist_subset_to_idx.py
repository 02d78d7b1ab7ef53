#!/usr/bin/env python3
"""Rebuild data/mnist-subset/ from the `mnist` npm package (10,000 digits).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset_to_idx.py package/src/digits data/mnist-subset

The package stores pixels as intensities rounded to three decimals, which
round back to the original 8-bit values exactly. Digits are interleaved with a
fixed-seed permutation so that any prefix of the files is class-balanced in
expectation.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            pixels = bytes(round(v * 255) for v in flat[k * 784:(k + 1) * 784])
            samples.append((pixels, digit))
    random.Random(20161205).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    images = struct.pack(">IIII", 2051, n, 28, 28) + b"".join(p for p, _ in samples)
    labels = struct.pack(">II", 2049, n) + bytes(d for _, d in samples)
    # mtime=0 keeps the archives byte-reproducible
    with open(dst / "images-idx3-ubyte.gz", "wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
            gz.write(images)
    with open(dst / "labels-idx1-ubyte.gz", "wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
            gz.write(labels)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
