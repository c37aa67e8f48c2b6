#!/usr/bin/env python3
"""Write the 5000-sample MNIST excerpt shipped with mlxtend as IDX files.

The excerpt holds 500 images per digit. The first 400 of each digit go to
`train-*`, the remaining 100 to `t10k-*`, giving 4000 train / 1000 test.

Usage:
    python3 scripts/mnist5k_to_idx.py [--wheel mlxtend-*.whl] [--out data/mnist]

Without --wheel the installed `mlxtend` package is used.
"""

import argparse
import gzip
import os
import struct
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(wheel):
    if wheel:
        with zipfile.ZipFile(wheel) as z:
            raw = z.read(CSV_MEMBER)
    else:
        import mlxtend.data

        path = os.path.join(os.path.dirname(mlxtend.data.__file__), "data", "mnist_5k.csv.gz")
        with open(path, "rb") as f:
            raw = f.read()
    rows = []
    for line in gzip.decompress(raw).decode().splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:-1]), vals[-1]))
    return rows


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/mnist")
    args = ap.parse_args()

    rows = read_rows(args.wheel)
    by_digit = {d: [r for r in rows if r[1] == d] for d in range(10)}
    train = [r for d in range(10) for r in by_digit[d][:400]]
    test = [r for d in range(10) for r in by_digit[d][400:]]

    os.makedirs(args.out, exist_ok=True)
    write_images(os.path.join(args.out, "train-images-idx3-ubyte"), [r[0] for r in train])
    write_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), [r[1] for r in train])
    write_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), [r[0] for r in test])
    write_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), [r[1] for r in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
