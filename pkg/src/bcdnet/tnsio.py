"""Reader/writer for the ``.tns`` tensor file format.

Layout: ``b"TNS1"``, u32 rank, ``rank`` u32 dims, then the float64 payload in
row-major order.  Every integer and float is little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNS1"


class TnsFormatError(ValueError):
    pass


def to_bytes(array) -> bytes:
    arr = np.asarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise TnsFormatError(f"bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise TnsFormatError("truncated header")
    (rank,) = struct.unpack_from("<I", buf, 4)
    offset = 8 + 4 * rank
    if len(buf) < offset:
        raise TnsFormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != offset + 8 * count:
        raise TnsFormatError(f"payload is {len(buf) - offset} bytes, expected {8 * count} for dims {dims}")
    return np.frombuffer(buf, dtype="<f8", offset=offset).reshape(dims).astype(np.float64)


def save(path, array) -> None:
    Path(path).write_bytes(to_bytes(array))


def load(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())
