#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

Usage: convert_npm_mnist.py <npm-package-dir> <out-dir>

Each class is split in file order: the first TRAIN_PER_CLASS digits go to the
train split and the remainder to the test split. Both splits are then shuffled
with a fixed seed and written as gzip-compressed IDX (MNIST layout).
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 700
SIDE = 28


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": [], "t10k": []}
    for digit in range(10):
        data = json.loads((src / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(data) // (SIDE * SIDE)
        for i in range(n):
            px = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            img = [max(0, min(255, round(v * 255))) for v in px]
            splits["train" if i < TRAIN_PER_CLASS else "t10k"].append((img, digit))
    rng = random.Random(20251016)
    for name, items in splits.items():
        rng.shuffle(items)
        images = [b for img, _ in items for b in img]
        labels = [lab for _, lab in items]
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, (len(items), SIDE, SIDE), images)
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(items),), labels)
        print(name, len(items))


if __name__ == "__main__":
    main()
