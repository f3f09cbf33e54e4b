"""Flat float64 parameter container shared by the cursor CNN and the memory.

Layout: 8-byte magic, little-endian uint32 version, little-endian uint32
value count, then ``count`` little-endian doubles.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParamsFileError

HEADER = struct.Struct("<8sII")
VERSION = 1


def dump_params(magic: bytes, values: np.ndarray) -> bytes:
    assert len(magic) == 8
    flat = np.ascontiguousarray(values, dtype="<f8").ravel()
    return HEADER.pack(magic, VERSION, flat.size) + flat.tobytes()


def load_params(magic: bytes, data: bytes, expected: int | None = None) -> np.ndarray:
    if len(data) < HEADER.size:
        raise ParamsFileError("params file shorter than its header")
    found, version, count = HEADER.unpack_from(data)
    if found != magic:
        raise ParamsFileError(f"bad magic {found!r}, expected {magic!r}")
    if version != VERSION:
        raise ParamsFileError(f"unsupported params version {version}")
    if len(data) != HEADER.size + 8 * count:
        raise ParamsFileError(f"params payload has wrong length for {count} values")
    if expected is not None and count != expected:
        raise ParamsFileError(f"expected {expected} values, file holds {count}")
    values = np.frombuffer(data, dtype="<f8", offset=HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ParamsFileError("params file contains non-finite values")
    return values


def save_file(path, magic: bytes, values: np.ndarray) -> None:
    Path(path).write_bytes(dump_params(magic, values))


def load_file(path, magic: bytes, expected: int | None = None) -> np.ndarray:
    return load_params(magic, Path(path).read_bytes(), expected)
