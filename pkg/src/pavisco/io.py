"""Binary field files and small CSV helpers.

Field file layout (little-endian)::

    magic      4 bytes   b"PVSF"
    version    uint16    1
    dtype      uint8     1 = float64
    ndim       uint8
    shape      ndim x uint64
    spacing    ndim x float64   (metres, or seconds for a time axis; 0 = not spatial)
    tag_len    uint16
    tag        tag_len bytes UTF-8
    payload    prod(shape) x float64, row-major

Detector time series use shape ``(n_sensors, nt)`` and spacing ``(0, dt)``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"PVSF"
VERSION = 1
DTYPE_F64 = 1


class FieldFormatError(ValueError):
    pass


@dataclass
class FieldData:
    array: np.ndarray
    spacing: tuple[float, ...]
    tag: str


def write_field(path: str | Path, array: np.ndarray, spacing: Sequence[float], tag: str = "") -> Path:
    arr = np.asarray(array, dtype="<f8", order="C")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != arr.ndim:
        raise ValueError(f"spacing needs {arr.ndim} entries, got {len(spacing)}")
    tag_b = tag.encode("utf-8")
    header = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack(f"<{arr.ndim}d", *spacing)
    header += struct.pack("<H", len(tag_b)) + tag_b
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    return path


def read_field(path: str | Path) -> FieldData:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FieldFormatError(f"{path}: not a field file")
    version, dtype, ndim = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION or dtype != DTYPE_F64:
        raise FieldFormatError(f"{path}: unsupported version {version} or dtype {dtype}")
    off = 8
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    spacing = struct.unpack_from(f"<{ndim}d", raw, off)
    off += 8 * ndim
    (tag_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    tag = raw[off:off + tag_len].decode("utf-8")
    off += tag_len
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - off != 8 * count:
        raise FieldFormatError(f"{path}: payload has {len(raw) - off} bytes, expected {8 * count}")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
    return FieldData(arr, tuple(spacing), tag)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_positions(path: str | Path, positions: np.ndarray) -> Path:
    d = positions.shape[1]
    return write_csv(path, [f"x{a}" for a in range(d)], ([repr(float(v)) for v in row] for row in positions))


def read_positions(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
