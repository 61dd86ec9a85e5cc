#!/usr/bin/env python3
"""Fetch MNIST into $APDATA/mnist (default ./data/mnist) as raw IDX files.

Tries the public MNIST mirrors first. When none is reachable, falls back to
the 10,000-digit MNIST sample shipped in the `mnist` npm package and writes
it out as `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` (no t10k
files; the harness then uses a seeded 80/20 split for held-out data).
"""

import gzip
import io
import json
import os
import struct
import sys
import tarfile
import urllib.request

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]
NPM_TARBALL = "https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz"


def fetch(url, timeout=30):
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def try_mirrors(out):
    for base in MIRRORS:
        try:
            blobs = {name: gzip.decompress(fetch(base + name + ".gz")) for name in FILES}
        except Exception as e:  # noqa: BLE001
            print(f"mirror {base} unavailable: {e}", file=sys.stderr)
            continue
        for name, data in blobs.items():
            with open(os.path.join(out, name), "wb") as f:
                f.write(data)
        return True
    return False


def write_idx(out, images, labels):
    n = len(labels)
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(bytes(images))
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(labels))


def from_npm(out):
    tgz = fetch(NPM_TARBALL, timeout=120)
    per_digit = {}
    with tarfile.open(fileobj=io.BytesIO(tgz), mode="r:gz") as tar:
        for d in range(10):
            member = tar.extractfile(f"package/src/digits/{d}.json")
            per_digit[d] = json.load(member)["data"]
    # interleave digits so that a prefix of the file is roughly balanced
    samples = []
    for d, flat in per_digit.items():
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            samples.append((k, d, flat[k * 784 : (k + 1) * 784]))
    samples.sort(key=lambda s: (s[0], s[1]))
    images = bytearray()
    labels = bytearray()
    for _, d, px in samples:
        images.extend(min(255, max(0, round(v * 255))) for v in px)
        labels.append(d)
    write_idx(out, images, labels)
    print(f"wrote {len(labels)} digits from the npm sample", file=sys.stderr)


def main():
    root = os.environ.get("APDATA", os.path.join(os.getcwd(), "data"))
    out = os.path.join(root, "mnist")
    os.makedirs(out, exist_ok=True)
    if try_mirrors(out):
        print(f"MNIST written to {out}", file=sys.stderr)
        return
    from_npm(out)
    print(f"MNIST sample written to {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
