"""Tensor container: a length-prefixed UTF-8 JSON header followed by raw payloads.

Layout::

    8 bytes   little-endian uint64, header length H
    H bytes   UTF-8 JSON {"meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}, ...]}
    payload   tensors concatenated in header order, little-endian IEEE-754

Offsets are relative to the start of the payload.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "|u1"}


class CheckpointError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        key = arr.dtype.name
        if key not in DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=np.dtype(DTYPES[key])).tobytes()
        entries.append({"name": name, "dtype": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint")
    (hlen,) = struct.unpack("<Q", data[:8])
    if 8 + hlen > len(data):
        raise CheckpointError("header length exceeds file size")
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    base = 8 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        end = start + e["nbytes"]
        if end > len(data):
            raise CheckpointError(f"payload for {e['name']!r} is truncated")
        arr = np.frombuffer(data[start:end], dtype=np.dtype(DTYPES[e["dtype"]]))
        tensors[e["name"]] = arr.astype(np.dtype(e["dtype"])).reshape(e["shape"])
    return tensors, header["meta"]


def save(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    atomic_write(path, dumps(tensors, meta))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
