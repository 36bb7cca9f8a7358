"""Grayscale portable-float-map I/O for depth maps.

Layout: ``Pf`` header line, ``W H`` dimensions line, scale line whose sign
encodes endianness (negative = little-endian), then H x W float32 values
in bottom-up row order. PFM has no mask channel; since valid depths are
strictly positive, invalid pixels are stored as 0.0 and any non-positive
stored value reads back as invalid.

Values are stored at float32 precision: the write/read round trip is
bit-exact for maps whose values are float32-representable.
"""

from __future__ import annotations

import numpy as np

from .depthmap import DepthMap


def write_pfm(path, depth: DepthMap) -> None:
    data = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> DepthMap:
    with open(path, "rb") as f:
        if _read_line(f) != "Pf":
            raise ValueError("not a grayscale PFM file")
        dims = _read_line(f).split()
        if len(dims) != 2:
            raise ValueError("malformed PFM dimensions line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(_read_line(f))
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(4 * width * height)
        if len(raw) != 4 * width * height:
            raise ValueError("truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    values = np.flipud(data).astype(np.float64)
    valid = values > 0.0
    return DepthMap(np.where(valid, values, 0.0), valid)


def _read_line(f) -> str:
    out = bytearray()
    while True:
        c = f.read(1)
        if not c:
            raise ValueError("unexpected end of PFM header")
        if c == b"\n":
            return out.decode("ascii").strip()
        out += c
