"""Flat binary tensor container.

Layout (little-endian)::

    b"GPRODOM1"  u32 version
    repeated until EOF:
        u32 name_len, utf-8 name, u32 rank, u64 extents[rank], f64 payload[prod(extents)]
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GPRODOM1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        while off < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if off + 8 * count > len(buf):
                raise CheckpointError(f"{path}: record {name!r} truncated")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated record header") from exc
    return out


def save_module(path: str | Path, module) -> None:
    save_tensors(path, module.state_dict())


def load_module(path: str | Path, module):
    """Load parameters and buffers into ``module`` in place; returns the module."""
    module.load_state_dict(load_tensors(path))
    return module
