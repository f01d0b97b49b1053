"""Versioned binary container for named parameter tensors.

Layout (little-endian)::

    magic    8 bytes  b"GCNCKPT\\0"
    version  uint32   1
    count    uint32   number of parameters
    per parameter:
        name_len uint16, name (utf-8), ndim uint32, ndim x uint64 dims,
        prod(dims) float64 values (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from graphcnn.data import ContainerError

CHECKPOINT_MAGIC = b"GCNCKPT\0"
CHECKPOINT_VERSION = 1


def dumps_parameters(named: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<8sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(named))]
    for name, value in named.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{value.ndim}Q", value.ndim, *value.shape))
        parts.append(value.tobytes())
    return b"".join(parts)


def loads_parameters(raw: bytes) -> dict[str, np.ndarray]:
    try:
        magic, version, count = struct.unpack_from("<8sII", raw, 0)
    except struct.error as exc:
        raise ContainerError("truncated checkpoint header") from exc
    if magic != CHECKPOINT_MAGIC:
        raise ContainerError("not a checkpoint container")
    if version != CHECKPOINT_VERSION:
        raise ContainerError(f"unsupported checkpoint version {version}")
    pos = struct.calcsize("<8sII")
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(raw):
                raise ContainerError(f"parameter {name!r} runs past the end of the file")
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ContainerError("truncated checkpoint body") from exc
    if pos != len(raw):
        raise ContainerError(f"{len(raw) - pos} trailing bytes after the last parameter")
    return out


def save_checkpoint(named: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(dumps_parameters(named))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads_parameters(Path(path).read_bytes())
