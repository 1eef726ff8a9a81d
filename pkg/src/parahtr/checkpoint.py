"""PHTR checkpoint container.

Byte layout (all integers little-endian)::

    magic      4 bytes   b"PHTR"
    version    u32       currently 1
    count      u32       number of entries
    entry * count:
        name_len   u32
        name       name_len bytes, UTF-8
        dtype      u8     0=float64 1=float32 2=int64 3=uint8
        ndim       u32
        dims       ndim * u64
        values     prod(dims) * itemsize bytes, little-endian, row-major

Entries are written in the order given, so a load followed by a save
reproduces the file byte for byte. Names carry a prefix by owner:
``enc.`` encoder, ``dec.`` decoder, ``lm.`` language model, ``opt.``
optimizer state and ``meta.`` bookkeeping (step counters, config text,
vocabulary files stored as uint8 blobs).
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PHTR"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


class CheckpointError(ValueError):
    pass


def to_bytes(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "i" and arr.dtype != np.int64:
            arr = arr.astype(np.int64)
        tag = _TAGS.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a PHTR checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            tag, ndim = struct.unpack_from("<BI", buf, off)
            off += 5
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            dt = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(buf):
                raise CheckpointError(f"truncated data for entry {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
            off += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError("truncated or corrupt checkpoint") from exc
    if off != len(buf):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path: str | Path, entries: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(entries))
    tmp.replace(path)


def load(path: str | Path) -> dict[str, np.ndarray]:
    return from_bytes(Path(path).read_bytes())


def text_entry(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def entry_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")
