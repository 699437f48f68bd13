"""Embedding snapshot container, the EDRF v1 file format, and alignment.

EDRF v1 is a little-endian binary layout:

    magic      4 bytes, ASCII "EDRF"
    version    u16 = 1
    dim        u16
    class_count u16
    reserved   u16 = 0
    stage_name u16 length + UTF-8 bytes
    class table  class_count x (u16 length + UTF-8 bytes)
    token_count  u64
    records    token_count x { token_uid u64, class_id u16, embedding dim x f32 }

A JSONL representation is accepted on input for debuggability (header line
with stage/dim/classes, then one object per token with uid/label/vec); the
binary format is the canonical output. Loading is strict: any violated
invariant is a hard error, nothing is repaired silently.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    CorruptFile,
    DimMismatch,
    InvalidSnapshot,
    IoError,
    NotEdrf,
    UnsupportedVersion,
)

MAGIC = b"EDRF"
VERSION = 1


class TokenRecord(NamedTuple):
    token_uid: int
    class_id: int
    embedding: np.ndarray


@dataclass
class EmbeddingSnapshot:
    """All per-token embeddings of one model state.

    Stored column-wise (uids, class ids, embedding matrix) for numpy-friendly
    access; ``record(i)`` gives the row view. Embeddings are float32 on disk;
    in memory float64 is tolerated so callers can stay in full precision.
    """

    stage_name: str
    dim: int
    class_table: list[str]
    uids: np.ndarray  # (n,) uint64
    class_ids: np.ndarray  # (n,) uint16
    embeddings: np.ndarray  # (n, dim) float32 or float64

    def __post_init__(self):
        self.uids = np.asarray(self.uids, dtype=np.uint64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.uint16)
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings))
        if self.embeddings.dtype not in (np.float32, np.float64):
            self.embeddings = self.embeddings.astype(np.float32)
        if self.count == 0:
            self.embeddings = self.embeddings.reshape(0, self.dim)

    @property
    def count(self) -> int:
        return int(self.uids.shape[0])

    def record(self, i: int) -> TokenRecord:
        return TokenRecord(
            int(self.uids[i]), int(self.class_ids[i]), self.embeddings[i]
        )

    def class_name(self, i: int) -> str:
        return self.class_table[int(self.class_ids[i])]

    def validate(self) -> None:
        if not self.class_table or self.class_table[0] != "O":
            raise InvalidSnapshot("class table must contain 'O' at index 0")
        if len(set(self.class_table)) != len(self.class_table):
            raise InvalidSnapshot("duplicate class names in class table")
        if self.dim < 1:
            raise InvalidSnapshot(f"dim must be >= 1, got {self.dim}")
        n = self.count
        if self.class_ids.shape != (n,):
            raise InvalidSnapshot("class_ids length differs from uid count")
        if self.embeddings.shape != (n, self.dim):
            raise InvalidSnapshot(
                f"embedding block {self.embeddings.shape} != ({n}, {self.dim})"
            )
        if n and int(self.class_ids.max()) >= len(self.class_table):
            raise InvalidSnapshot("class_id outside the class table")
        if len(np.unique(self.uids)) != n:
            raise InvalidSnapshot("duplicate token_uid values")

    def tokens_of_class(self, name: str) -> np.ndarray:
        """Boolean mask of records labeled ``name``."""
        idx = self.class_table.index(name)
        return self.class_ids == idx


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("uid", "<u8"), ("cls", "<u2"), ("emb", "<f4", (dim,))]
    )


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidSnapshot("string field longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def write_snapshot(snapshot: EmbeddingSnapshot, sink) -> int:
    """Serialize to EDRF v1. Returns the number of bytes written."""
    snapshot.validate()
    head = io.BytesIO()
    head.write(MAGIC)
    head.write(
        struct.pack("<HHHH", VERSION, snapshot.dim, len(snapshot.class_table), 0)
    )
    head.write(_pack_str(snapshot.stage_name))
    for name in snapshot.class_table:
        head.write(_pack_str(name))
    head.write(struct.pack("<Q", snapshot.count))

    records = np.empty(snapshot.count, dtype=_record_dtype(snapshot.dim))
    records["uid"] = snapshot.uids
    records["cls"] = snapshot.class_ids
    records["emb"] = snapshot.embeddings.astype(np.float32, copy=False)

    payload = head.getvalue() + records.tobytes()
    try:
        sink.write(payload)
    except OSError as exc:
        raise IoError(f"snapshot write failed: {exc}") from exc
    return len(payload)


def write_snapshot_file(snapshot: EmbeddingSnapshot, path) -> int:
    try:
        with open(path, "wb") as fh:
            return write_snapshot(snapshot, fh)
    except OSError as exc:
        raise IoError(f"cannot open {path!r} for writing: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile(
                f"truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile("undecodable UTF-8 in string field") from exc


def read_snapshot(source) -> EmbeddingSnapshot:
    """Parse EDRF v1 bytes; every structural invariant is checked."""
    try:
        data = source.read() if hasattr(source, "read") else bytes(source)
    except OSError as exc:
        raise IoError(f"snapshot read failed: {exc}") from exc

    if data[:4] != MAGIC:
        raise NotEdrf(f"bad magic {data[:4]!r}")
    r = _Reader(data)
    r.take(4)
    version = r.u16()
    if version != VERSION:
        raise UnsupportedVersion(f"EDRF version {version} not supported")
    dim = r.u16()
    class_count = r.u16()
    reserved = r.u16()
    if reserved != 0:
        raise CorruptFile(f"reserved header field is {reserved}, expected 0")
    stage_name = r.string()
    class_table = [r.string() for _ in range(class_count)]
    token_count = r.u64()

    rec_dtype = _record_dtype(dim)
    body = r.take(token_count * rec_dtype.itemsize)
    if r.pos != len(data):
        raise CorruptFile(f"{len(data) - r.pos} trailing bytes after records")
    records = np.frombuffer(body, dtype=rec_dtype)

    snap = EmbeddingSnapshot(
        stage_name=stage_name,
        dim=dim,
        class_table=class_table,
        uids=records["uid"].copy(),
        class_ids=records["cls"].copy(),
        embeddings=records["emb"].copy(),
    )
    snap.validate()
    return snap


def read_snapshot_file(path) -> EmbeddingSnapshot:
    try:
        with open(path, "rb") as fh:
            return read_snapshot(fh)
    except OSError as exc:
        raise IoError(f"cannot open {path!r}: {exc}") from exc


# -- JSONL alternative -------------------------------------------------------

def read_snapshot_jsonl(source) -> EmbeddingSnapshot:
    """Parse the JSONL form: a header object, then one object per token."""
    text = source.read() if hasattr(source, "read") else source
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CorruptFile("empty JSONL snapshot")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"bad JSONL header: {exc}") from exc
    for key in ("stage", "dim", "classes"):
        if key not in header:
            raise CorruptFile(f"JSONL header missing {key!r}")
    dim = int(header["dim"])
    class_table = list(header["classes"])
    index = {name: i for i, name in enumerate(class_table)}

    uids, class_ids, rows = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"line {lineno}: bad JSON: {exc}") from exc
        try:
            uid, label, vec = obj["uid"], obj["label"], obj["vec"]
        except (KeyError, TypeError) as exc:
            raise CorruptFile(f"line {lineno}: missing uid/label/vec") from exc
        if label not in index:
            raise InvalidSnapshot(f"line {lineno}: label {label!r} not in classes")
        if len(vec) != dim:
            raise InvalidSnapshot(f"line {lineno}: vec length {len(vec)} != dim {dim}")
        uids.append(int(uid))
        class_ids.append(index[label])
        rows.append(np.asarray(vec, dtype=np.float32))

    snap = EmbeddingSnapshot(
        stage_name=str(header["stage"]),
        dim=dim,
        class_table=class_table,
        uids=np.asarray(uids, dtype=np.uint64),
        class_ids=np.asarray(class_ids, dtype=np.uint16),
        embeddings=(
            np.stack(rows) if rows else np.empty((0, dim), dtype=np.float32)
        ),
    )
    snap.validate()
    return snap


def load_snapshot(path) -> EmbeddingSnapshot:
    """Open either format: EDRF when the magic matches, JSONL otherwise."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot open {path!r}: {exc}") from exc
    if data[:4] == MAGIC:
        return read_snapshot(data)
    return read_snapshot_jsonl(data)


# -- Alignment ---------------------------------------------------------------

@dataclass
class AlignedPairSet:
    """Per-class (before, after) embedding pairs joined on token_uid.

    Classes come from the BEFORE snapshot's labels, so per-class drift is
    always asked about the category a token belonged to in the earlier
    model state. Tokens present in only one snapshot are counted as dropped.
    """

    dim: int
    pairs: dict[str, tuple[np.ndarray, np.ndarray]]
    uids: dict[str, np.ndarray]
    dropped_before: int
    dropped_after: int

    def n_aligned(self, class_name: str) -> int:
        if class_name not in self.pairs:
            return 0
        return int(self.pairs[class_name][0].shape[0])

    @property
    def total_aligned(self) -> int:
        return sum(b.shape[0] for b, _ in self.pairs.values())

    @property
    def total_dropped(self) -> int:
        return self.dropped_before + self.dropped_after


def align(before: EmbeddingSnapshot, after: EmbeddingSnapshot) -> AlignedPairSet:
    """Inner join of two snapshots on token_uid, grouped by the before label."""
    if before.dim != after.dim:
        raise DimMismatch(f"before dim {before.dim} != after dim {after.dim}")
    shared, idx_before, idx_after = np.intersect1d(
        before.uids, after.uids, return_indices=True
    )
    pairs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    uids: dict[str, np.ndarray] = {}
    cls_of_shared = before.class_ids[idx_before]
    for ci, name in enumerate(before.class_table):
        sel = cls_of_shared == ci
        if not np.any(sel):
            continue
        pairs[name] = (
            before.embeddings[idx_before[sel]],
            after.embeddings[idx_after[sel]],
        )
        uids[name] = shared[sel]
    return AlignedPairSet(
        dim=before.dim,
        pairs=pairs,
        uids=uids,
        dropped_before=before.count - len(shared),
        dropped_after=after.count - len(shared),
    )
