"""Binary PGM (P5) read/write, 8-bit grayscale, values quantized by round(v*255)."""

from __future__ import annotations

import os

import numpy as np


def encode_pgm(values: np.ndarray) -> bytes:
    if values.ndim != 2:
        raise ValueError("PGM encoding expects a 2D array")
    quantized = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255)
    data = quantized.astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def decode_pgm(blob: bytes) -> np.ndarray:
    """Returns values in [0, 1] as float64."""
    if not blob.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path: str | os.PathLike, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(values))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
