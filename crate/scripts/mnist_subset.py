#!/usr/bin/env python3
"""Build the gzip IDX MNIST subset used by the acceptance tests.

Source: the 10,000 MNIST digits bundled with the `mnist` npm package
(`npm pack mnist && tar xzf mnist-*.tgz`). Pixels there are stored as
value/255 rounded to three decimals; they are mapped back to uint8 by
rounding. The subset is a seeded shuffle: first 2000 -> train, next 1000 -> test.

usage: mnist_subset.py <path/to/package> <out_dir> [--train 2000] [--test 1000] [--seed 0]
"""
import argparse
import gzip
import json
import os
import struct

import numpy as np


def write_images(path, images):
    n = images.shape[0]
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(args.package, "src", "digits", f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        raw = np.clip(np.rint(raw * 255.0), 0, 255).reshape(-1, 784)
        images.append(raw)
        labels.append(np.full(raw.shape[0], digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    train = order[: args.train]
    test = order[args.train : args.train + args.test]

    os.makedirs(args.out_dir, exist_ok=True)
    write_images(os.path.join(args.out_dir, "train-images-idx3-ubyte.gz"), images[train])
    write_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte.gz"), labels[train])
    write_images(os.path.join(args.out_dir, "t10k-images-idx3-ubyte.gz"), images[test])
    write_labels(os.path.join(args.out_dir, "t10k-labels-idx1-ubyte.gz"), labels[test])


if __name__ == "__main__":
    main()
