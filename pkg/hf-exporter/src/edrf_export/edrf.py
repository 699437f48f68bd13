"""Minimal EDRF v1 writer plus a header peek for dim checks.

Little-endian layout: magic "EDRF"; u16 version = 1; u16 dim; u16 class
count; u16 reserved = 0; length-prefixed UTF-8 stage name; the class
table as length-prefixed UTF-8 names; u64 token count; then per token a
u64 uid, a u16 class id and dim float32 embedding values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

MAGIC = b"EDRF"
VERSION = 1


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ExportError("string field longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def write_edrf(
    path,
    stage_name: str,
    class_table: list[str],
    uids: np.ndarray,
    class_ids: np.ndarray,
    embeddings: np.ndarray,
) -> int:
    """Write one snapshot file; returns the number of bytes written."""
    if not class_table or class_table[0] != "O":
        raise ExportError("class table must put 'O' at index 0")
    if len(set(class_table)) != len(class_table):
        raise ExportError("duplicate class names")
    n, dim = embeddings.shape
    if dim < 1:
        raise ExportError("embedding dim must be >= 1")
    if uids.shape != (n,) or class_ids.shape != (n,):
        raise ExportError("uids, class ids and embeddings disagree on length")
    if len(np.unique(uids)) != n:
        raise ExportError("duplicate token uids")
    if n and int(class_ids.max()) >= len(class_table):
        raise ExportError("class id outside the class table")

    head = bytearray()
    head += MAGIC
    head += struct.pack("<HHHH", VERSION, dim, len(class_table), 0)
    head += _pack_str(stage_name)
    for name in class_table:
        head += _pack_str(name)
    head += struct.pack("<Q", n)

    records = np.empty(
        n, dtype=np.dtype([("uid", "<u8"), ("cls", "<u2"), ("emb", "<f4", (dim,))])
    )
    records["uid"] = uids.astype(np.uint64)
    records["cls"] = class_ids.astype(np.uint16)
    records["emb"] = embeddings.astype(np.float32, copy=False)

    payload = bytes(head) + records.tobytes()
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise ExportError(f"cannot write {path!r}: {exc}") from exc
    return len(payload)


def peek_dim(path) -> int | None:
    """dim of an existing EDRF v1 file, None when absent or unreadable."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError:
        return None
    if len(head) < 8 or head[:4] != MAGIC:
        return None
    version, dim = struct.unpack("<HH", head[4:8])
    return dim if version == VERSION else None
