"""Labelled graph-signal datasets and their binary container.

Container layout (all integers little-endian)::

    magic    8 bytes   b"GCNDATA\\0"
    version  uint32    1
    count    uint64    number of samples M
    features uint32    F
    nodes    uint32    N
    then M records of F*N float64 values followed by one int64 label
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"GCNDATA\0"
DATASET_VERSION = 1
_HEADER = struct.Struct("<8sIQII")


class ContainerError(ValueError):
    """Raised when a binary container is malformed or of the wrong kind."""


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Graph signals of shape ``(M, F, N)`` with integer class labels."""

    signals: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        signals = np.ascontiguousarray(self.signals, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if signals.ndim != 3:
            raise ValueError(f"signals must be (M, F, N), got shape {signals.shape}")
        if labels.shape != (signals.shape[0],):
            raise ValueError(f"{labels.shape[0]} labels for {signals.shape[0]} signals")
        if not np.all(np.isfinite(signals)):
            raise ValueError("signals contain non-finite values")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        signals.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.signals.shape[0]

    @property
    def n_features(self) -> int:
        return self.signals.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.signals.shape[2]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.signals[index], self.labels[index])

    def split(self, *sizes: int) -> list["LabeledDataset"]:
        """Consecutive, non-overlapping slices of the given sizes."""
        if sum(sizes) > len(self):
            raise ValueError(f"split sizes {sizes} exceed {len(self)} samples")
        out, start = [], 0
        for size in sizes:
            out.append(self.subset(slice(start, start + size)))
            start += size
        return out


def write_dataset(dataset: LabeledDataset, path) -> None:
    m, f, n = dataset.signals.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, m, f, n))
        record = np.zeros(m, dtype=[("x", "<f8", (f * n,)), ("y", "<i8")])
        record["x"] = dataset.signals.reshape(m, f * n)
        record["y"] = dataset.labels
        fh.write(record.tobytes())


def read_dataset(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, m, f, n = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ContainerError(f"{path}: not a dataset container")
    if version != DATASET_VERSION:
        raise ContainerError(f"{path}: unsupported dataset version {version}")
    dtype = np.dtype([("x", "<f8", (f * n,)), ("y", "<i8")])
    body = raw[_HEADER.size:]
    if len(body) != m * dtype.itemsize:
        raise ContainerError(f"{path}: expected {m} records, body has {len(body)} bytes")
    record = np.frombuffer(body, dtype=dtype, count=m)
    return LabeledDataset(record["x"].reshape(m, f, n).astype(np.float64), record["y"].astype(np.int64))
