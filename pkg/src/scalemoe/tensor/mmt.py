"""``.mmt`` tensor files.

Layout (all little-endian)::

    b"MMT1" | u32 rank | rank × u32 dims | prod(dims) × f32 payload, row-major

Values are stored as float32: saving truncates the in-memory float64 values,
loading widens them back.  A rank-0 tensor carries exactly one payload value.
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Union

import numpy as np

from ..exceptions import CorruptRecord, IoFailure

MAGIC = b"MMT1"

PathLike = Union[str, os.PathLike]


def encode(array) -> bytes:
    arr = np.asarray(array)
    buf = io.BytesIO()
    write(buf, arr)
    return buf.getvalue()


def write(fh: BinaryIO, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read(fh: BinaryIO) -> np.ndarray:
    head = fh.read(8)
    if len(head) != 8 or head[:4] != MAGIC:
        raise CorruptRecord("not an MMT1 tensor (bad magic or truncated header)")
    (rank,) = struct.unpack("<I", head[4:])
    dims_raw = fh.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise CorruptRecord("truncated MMT1 dimension table")
    dims = struct.unpack(f"<{rank}I", dims_raw) if rank else ()
    count = int(np.prod(dims)) if rank else 1
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise CorruptRecord(f"truncated MMT1 payload: expected {4 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)


def decode(data: bytes) -> np.ndarray:
    fh = io.BytesIO(data)
    arr = read(fh)
    if fh.read(1):
        raise CorruptRecord("trailing bytes after MMT1 payload")
    return arr


def save(path: PathLike, array) -> None:
    try:
        with open(path, "wb") as fh:
            write(fh, array)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load(path: PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode(data)
