"""Flat binary container for named parameter arrays.

Layout (all integers little-endian):

    magic   4 bytes  b"SODW"
    version u32      currently 1
    records until EOF, each:
        name_len u32
        name     name_len bytes, UTF-8
        rank     u32
        extents  rank x u64
        data     product(extents) x f64, little-endian IEEE-754

The byte layout is normative: two writers given the same named arrays must
produce identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SODW"
VERSION = 1


class WeightFormatError(ValueError):
    """Container bytes do not follow the expected layout."""


def save_weights(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    """Write name -> array records in dict order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", data.ndim)
        blob += struct.pack(f"<{data.ndim}Q", *data.shape)
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """Read records back in file order; arrays come out float64."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported container version {version}")

    arrays: dict[str, np.ndarray] = {}
    offset = 8
    total = len(blob)
    while offset < total:
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        extents = struct.unpack_from(f"<{rank}Q", blob, offset)
        offset += 8 * rank
        count = int(np.prod(extents)) if rank else 1
        end = offset + 8 * count
        if end > total:
            raise WeightFormatError(f"truncated data for record {name!r}")
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[name] = data.reshape(extents).astype(np.float64)
        offset = end
    return arrays
