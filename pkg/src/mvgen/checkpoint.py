"""MVCKPT checkpoint container.

Layout: magic "MVCKPT", version u32 LE, header length u64 LE, JSON header
(config echo plus a section table of name/shape/offset), then the raw
little-endian float32 blobs. Offsets are element counts into the blob region.
float32 payloads round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

MAGIC = b"MVCKPT"
VERSION = 1


def encode_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    sections = []
    offset = 0
    blobs = []
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = json.dumps({"config": config, "sections": sections},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([
        MAGIC,
        VERSION.to_bytes(4, "little"),
        len(header).to_bytes(8, "little"),
        header,
        *blobs,
    ])


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:6] != MAGIC:
        raise ValueError("not an MVCKPT checkpoint")
    version = int.from_bytes(blob[6:10], "little")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_len = int.from_bytes(blob[10:18], "little")
    header = json.loads(blob[18:18 + header_len].decode("utf-8"))
    base = 18 + header_len
    arrays = {}
    for section in header["sections"]:
        shape = tuple(section["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + section["offset"] * 4
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        arrays[section["name"]] = arr.reshape(shape).copy()
    return header["config"], arrays


def write_checkpoint(path: str | os.PathLike, config: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(config, arrays))


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def checkpoint_hash(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.blake2b(fh.read(), digest_size=16).hexdigest()
