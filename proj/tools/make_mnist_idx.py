#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package (MIT, 10k MNIST
digits stored as k/255 rounded to 3 decimals) into a gzip'd IDX image file.

usage: make_mnist_idx.py <package/src/digits> <out.idx.gz>
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    pixels = bytearray()
    count = 0
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for v in data:
            k = round(v * 255)
            assert 0 <= k <= 255 and abs(k / 255 - v) < 1e-3
            pixels.append(k)
        count += len(data) // 784
    header = struct.pack(">IIII", 0x00000803, count, 28, 28)
    with gzip.GzipFile(out, "wb", mtime=0) as f:
        f.write(header + bytes(pixels))
    print(f"wrote {count} images to {out}")


if __name__ == "__main__":
    main()
