#!/usr/bin/env python3
"""Write MNIST IDX files from the digit bundle shipped in the npm `mnist` package.

The npm tarball (`npm pack mnist`) carries 10,000 MNIST digits as JSON arrays of
pixel intensities rounded to three decimals; multiplying by 255 and rounding
recovers the original bytes exactly. The digits are interleaved by class and
split deterministically into train/test IDX files under <out>/mnist/.

    npm pack mnist
    python3 tools/prepare_mnist.py --tarball mnist-1.1.0.tgz --out data
"""

import argparse
import io
import json
import random
import struct
import tarfile
from pathlib import Path


def read_digits(tarball):
    digits = {}
    with tarfile.open(tarball, "r:gz") as tar:
        for label in range(10):
            member = tar.extractfile(f"package/src/digits/{label}.json")
            values = json.load(io.TextIOWrapper(member))["data"]
            if len(values) % 784:
                raise ValueError(f"digit {label}: payload not a multiple of 784")
            images = []
            for i in range(len(values) // 784):
                chunk = values[i * 784:(i + 1) * 784]
                images.append(bytes(min(255, max(0, round(v * 255))) for v in chunk))
            digits[label] = images
    return digits


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--tarball", required=True)
    parser.add_argument("--out", default="data")
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    digits = read_digits(args.tarball)
    train, test = [], []
    for label, images in digits.items():
        n_test = round(len(images) * args.test_fraction)
        test += [(img, label) for img in images[:n_test]]
        train += [(img, label) for img in images[n_test:]]
    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)

    out = Path(args.out) / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", [img for img, _ in train])
    write_labels(out / "train-labels-idx1-ubyte", [lab for _, lab in train])
    write_images(out / "t10k-images-idx3-ubyte", [img for img, _ in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [lab for _, lab in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
