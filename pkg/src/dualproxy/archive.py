"""Byte-deterministic container for the DPX1 / DPXG1 / DPXM1 file formats.

Layout::

    <magic>\\n
    uint64 LE   manifest length
    manifest    canonical JSON: {"meta": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}
    payload     the arrays in manifest order, little-endian, C order
    32 bytes    SHA-256 of everything above

No timestamps or platform-dependent fields are written, so equal inputs give
equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np


class ArchiveError(ValueError):
    pass


_DTYPES = {"f8": "<f8", "i8": "<i8"}


def encode(magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        entries.append({"name": name, "dtype": kind, "shape": list(data.shape)})
        chunks.append(data.tobytes())
    manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    body = magic.encode() + b"\n" + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    head = magic.encode() + b"\n"
    if not blob.startswith(head):
        found = blob[: len(head)].split(b"\n")[0][:16]
        raise ArchiveError(f"bad magic header: expected {magic!r}, found {found!r}")
    body, digest = blob[:-32], blob[-32:]
    if len(blob) < len(head) + 8 + 32 or hashlib.sha256(body).digest() != digest:
        raise ArchiveError("checksum mismatch: file is truncated or corrupted")
    pos = len(head)
    (mlen,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    manifest = json.loads(body[pos : pos + mlen])
    pos += mlen
    arrays = {}
    for e in manifest["arrays"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(e["shape"]).astype(dt.newbyteorder("="))
        arrays[e["name"]] = arr
        pos += count * dt.itemsize
    if pos != len(body):
        raise ArchiveError("trailing bytes after payload")
    return manifest["meta"], arrays


def write_archive(path, magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write the archive and return the SHA-256 hex digest of its contents."""
    blob = encode(magic, meta, arrays)
    Path(path).write_bytes(blob)
    return blob[-32:].hex()


def read_archive(path, magic: str) -> tuple[dict, dict[str, np.ndarray], str]:
    blob = Path(path).read_bytes()
    meta, arrays = decode(blob, magic)
    return meta, arrays, blob[-32:].hex()
