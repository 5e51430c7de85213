"""Append-only binary store of per-round forensic evidence.

Data file (little-endian)::

    header : b"FLFC" | version u32
    record : round u64 | lr f64 | P u64 | global model P x f32
             | n_selected u32 | n_selected x (client id u32 | update P x f32)

Index file (``<data>.idx``)::

    header : b"FLFC" | version u32
    entry  : round u64 | offset u64 | length u64 | crc32 u32

``offset``/``length`` address a record's payload in the data file, and the
CRC32 covers exactly those bytes.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"FLFC"
VERSION = 1
_HEADER = struct.Struct("<4sI")
_REC_HEAD = struct.Struct("<QdQ")
_U32 = struct.Struct("<I")
_INDEX_ENTRY = struct.Struct("<QQQI")
_F32 = np.dtype("<f4")


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    round: int
    lr: float
    global_model: np.ndarray
    updates: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.global_model = np.asarray(self.global_model, dtype=np.float32)
        self.updates = {
            int(k): np.asarray(v, dtype=np.float32) for k, v in sorted(self.updates.items())
        }
        p = self.global_model.shape[0]
        for cid, g in self.updates.items():
            if g.shape != (p,):
                raise ValueError(f"update of client {cid} has shape {g.shape}, expected ({p},)")
            if cid < 0 or cid >= 2**32:
                raise ValueError(f"client id {cid} does not fit in u32")

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(self.updates)

    @property
    def num_params(self) -> int:
        return self.global_model.shape[0]


@dataclass(frozen=True)
class IndexEntry:
    round: int
    offset: int
    length: int
    crc32: int


def encode_checkpoint(cp: Checkpoint) -> bytes:
    parts = [
        _REC_HEAD.pack(cp.round, cp.lr, cp.num_params),
        cp.global_model.astype(_F32).tobytes(),
        _U32.pack(len(cp.updates)),
    ]
    for cid, g in cp.updates.items():
        parts.append(_U32.pack(cid))
        parts.append(g.astype(_F32).tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> Checkpoint:
    rnd, lr, p = _REC_HEAD.unpack_from(payload, 0)
    o = _REC_HEAD.size
    vec = 4 * p
    w = np.frombuffer(payload, dtype=_F32, count=p, offset=o).copy(); o += vec
    (count,) = _U32.unpack_from(payload, o); o += 4
    updates = {}
    for _ in range(count):
        (cid,) = _U32.unpack_from(payload, o); o += 4
        updates[cid] = np.frombuffer(payload, dtype=_F32, count=p, offset=o).copy(); o += vec
    if o != len(payload):
        raise CheckpointError(f"record for round {rnd} has {len(payload) - o} trailing bytes")
    return Checkpoint(rnd, lr, w, updates)


def record_size(num_params: int, num_selected: int) -> int:
    """Payload bytes of one record; the store grows by exactly this much per save."""
    return _REC_HEAD.size + 4 * num_params + 4 + num_selected * (4 + 4 * num_params)


def _fsync(f) -> None:
    f.flush()
    os.fsync(f.fileno())


def _check_header(raw: bytes, path: Path) -> None:
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")


class CheckpointStore:
    """Single-writer, many-reader checkpoint store rooted at one data file."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.index_path = self.path.with_name(self.path.name + ".idx")
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            for p in (self.path, self.index_path):
                with open(p, "wb") as f:
                    f.write(_HEADER.pack(MAGIC, VERSION))
                    _fsync(f)
        self._index = self._read_index()

    def _read_index(self) -> list[IndexEntry]:
        with open(self.path, "rb") as f:
            _check_header(f.read(_HEADER.size), self.path)
        raw = self.index_path.read_bytes()
        _check_header(raw, self.index_path)
        body = raw[_HEADER.size :]
        if len(body) % _INDEX_ENTRY.size:
            raise CheckpointError(f"{self.index_path}: truncated index entry")
        return [IndexEntry(*e) for e in _INDEX_ENTRY.iter_unpack(body)]

    def refresh(self) -> None:
        self._index = self._read_index()

    @property
    def index(self) -> list[IndexEntry]:
        return list(self._index)

    @property
    def rounds(self) -> list[int]:
        return [e.round for e in self._index]

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, rnd: int) -> bool:
        return any(e.round == rnd for e in self._index)

    def save(self, cp: Checkpoint) -> None:
        if self._index and cp.round <= self._index[-1].round:
            raise CheckpointError(
                f"round {cp.round} is not after last stored round {self._index[-1].round}"
            )
        payload = encode_checkpoint(cp)
        with open(self.path, "ab") as f:
            offset = f.seek(0, os.SEEK_END)
            f.write(payload)
            _fsync(f)
        entry = IndexEntry(cp.round, offset, len(payload), zlib.crc32(payload))
        with open(self.index_path, "ab") as f:
            f.write(_INDEX_ENTRY.pack(entry.round, entry.offset, entry.length, entry.crc32))
            _fsync(f)
        self._index.append(entry)

    def _load_entry(self, entry: IndexEntry, f) -> Checkpoint:
        f.seek(entry.offset)
        payload = f.read(entry.length)
        if len(payload) != entry.length:
            raise CheckpointError(f"round {entry.round}: record truncated")
        if zlib.crc32(payload) != entry.crc32:
            raise ChecksumError(f"round {entry.round}: checksum mismatch, record is corrupt")
        return decode_checkpoint(payload)

    def load(self, rnd: int) -> Checkpoint:
        for entry in self._index:
            if entry.round == rnd:
                with open(self.path, "rb") as f:
                    return self._load_entry(entry, f)
        raise KeyError(f"round {rnd} not in checkpoint store {self.path}")

    def __iter__(self) -> Iterator[Checkpoint]:
        with open(self.path, "rb") as f:
            for entry in list(self._index):
                yield self._load_entry(entry, f)


def save_checkpoint(store: CheckpointStore, cp: Checkpoint) -> None:
    store.save(cp)


def load_checkpoint(store: CheckpointStore, rnd: int) -> Checkpoint:
    return store.load(rnd)


def iter_checkpoints(store: CheckpointStore) -> Iterator[Checkpoint]:
    return iter(store)

