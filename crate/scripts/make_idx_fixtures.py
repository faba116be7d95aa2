#!/usr/bin/env python3
"""Regenerate the small IDX files used by the loader tests."""

import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"


def images(count, rows=28, cols=28, magic=0x803):
    body = bytearray()
    for i in range(count):
        for p in range(rows * cols):
            body.append((i * 97 + p * 13) % 256)
    body[0] = 255
    return struct.pack(">IIII", magic, count, rows, cols) + bytes(body)


def labels(values, magic=0x801):
    return struct.pack(">II", magic, len(values)) + bytes(values)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    good_images = images(2)
    files = {
        "two-images-idx3-ubyte": good_images,
        "two-labels-idx1-ubyte": labels([7, 2]),
        "three-labels-idx1-ubyte": labels([7, 2, 1]),
        "images-wrong-magic-idx3-ubyte": images(2, magic=0x801),
        "images-truncated-idx3-ubyte": good_images[:-10],
        "images-header-only-idx3-ubyte": good_images[:12],
        "labels-wrong-magic-idx1-ubyte": labels([7, 2], magic=0x803),
    }
    for name, data in files.items():
        (OUT / name).write_bytes(data)


if __name__ == "__main__":
    main()
