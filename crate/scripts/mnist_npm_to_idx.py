#!/usr/bin/env python3
"""Convert the 10k-digit MNIST subset shipped in the `mnist` npm package
(https://github.com/cazala/mnist, MIT) into gzip'd IDX files.

The npm package stores pixels as value/255 rounded to three decimals; the
256 distinct levels map back to bytes exactly via round(v * 255).

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-10k
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
        pixels = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(pixels) % 784 == 0
        for i in range(len(pixels) // 784):
            img = bytes(round(v * 255) for v in pixels[i * 784:(i + 1) * 784])
            samples.append((img, digit))
    # fixed interleaving so the file is not sorted by class
    random.Random(20190101).shuffle(samples)

    n = len(samples)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(s[0] for s in samples)
    labels = struct.pack(">II", 0x00000801, n) + bytes(s[1] for s in samples)

    dst.mkdir(parents=True, exist_ok=True)
    for name, payload in [("train-images-idx3-ubyte.gz", images), ("train-labels-idx1-ubyte.gz", labels)]:
        with open(dst / name, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(payload)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
