#!/usr/bin/env python3
"""Convert the 10000 MNIST digits bundled in the `mnist` npm package to IDX archives.

Usage: mnist_npm_to_idx.py <package-dir> <out-dir>

<package-dir> is an unpacked `mnist` package (npm install mnist, MIT licence);
its src/digits/<d>.json files hold 784 intensities per sample, scaled to [0,1]
and rounded to three decimals, which round back to the exact 8-bit pixels.

Writes train-{images,labels} (8500 samples) and t10k-{images,labels} (1500
samples) as gzipped IDX files, the layout of the original MNIST release.
The split is a fixed-seed shuffle so the output is reproducible.
"""
import gzip
import json
import random
import struct
import sys


def write_idx_images(path, rows):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(r))


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    samples = []
    for d in range(10):
        with open(f"{pkg}/src/digits/{d}.json") as f:
            raw = json.load(f)["data"]
        assert len(raw) % 784 == 0
        for i in range(len(raw) // 784):
            px = [round(v * 255) for v in raw[i * 784:(i + 1) * 784]]
            assert all(0 <= p <= 255 for p in px)
            samples.append((px, d))
    assert len({bytes(p) for p, _ in samples}) == len(samples), "duplicate digits"
    random.Random(20240101).shuffle(samples)
    train, test = samples[:8500], samples[8500:]
    for name, part in (("train", train), ("t10k", test)):
        write_idx_images(f"{out}/{name}-images-idx3-ubyte.gz", [p for p, _ in part])
        write_idx_labels(f"{out}/{name}-labels-idx1-ubyte.gz", [l for _, l in part])


if __name__ == "__main__":
    main()
