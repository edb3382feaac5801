"""Flat deterministic file containers: magic, JSON header, raw payload.

Layout: 8-byte magic, little-endian uint32 header length, canonical JSON
header bytes, payload. No timestamps or compression state, so identical
inputs always produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path


def write_container(path: str | Path, magic: bytes, header: dict, payload: bytes) -> None:
    if len(magic) != 8:
        raise ValueError(f"magic must be 8 bytes, got {len(magic)}")
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_container(path: str | Path, magic: bytes) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < len(magic) + 4:
        raise ValueError(f"{path}: truncated container")
    if raw[: len(magic)] != magic:
        raise ValueError(f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}")
    (hlen,) = struct.unpack_from("<I", raw, len(magic))
    start = len(magic) + 4
    if start + hlen > len(raw):
        raise ValueError(f"{path}: header length {hlen} exceeds file size")
    header = json.loads(raw[start : start + hlen].decode())
    return header, raw[start + hlen :]
