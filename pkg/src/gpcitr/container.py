"""Versioned binary container for fitted models.

Layout (all integers little-endian)::

    b"PITR"            4 bytes magic
    version            uint16
    header_length      uint32
    header             UTF-8 JSON, keys sorted
    payload            raw array bytes, concatenated

The header lists every array as ``{"name", "dtype", "shape", "offset",
"nbytes"}`` with offsets relative to the start of the payload. No timestamps
or other volatile data are written, so equal models give equal bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .errors import DomainError

MAGIC = b"PITR"
VERSION = 1


def dumps(header: dict[str, Any], arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    meta = dict(header)
    meta["arrays"] = entries
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + b"".join(chunks)


def loads(buf: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if buf[:4] != MAGIC:
        raise DomainError("not a model file (bad magic bytes)")
    version, hlen = struct.unpack("<HI", buf[4:10])
    if version > VERSION:
        raise DomainError(f"model file format version {version} is newer than supported {VERSION}")
    header = json.loads(buf[10 : 10 + hlen].decode("utf-8"))
    base = 10 + hlen
    arrays = {}
    for e in header.pop("arrays"):
        start = base + e["offset"]
        a = np.frombuffer(buf[start : start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    header["format_version"] = version
    return header, arrays


def write(path: str, header: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(header, arrays))


def read(path: str) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
