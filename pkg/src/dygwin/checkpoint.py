"""Versioned binary checkpoint container for named parameters.

Layout (all integers little-endian):
    magic "DYGW" | u32 version | u32 entry count
    per entry: u32 name length | name utf-8 | u8 precision tag ('f'/'d')
               | u32 ndim | u32 dims... | raw little-endian values

Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"DYGW"
VERSION = 1

_TAGS = {np.dtype(np.float32): b"f", np.dtype(np.float64): b"d"}
_DTYPES = {b"f": np.dtype("<f4"), b"d": np.dtype("<f8")}


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, p in params.items():
        tag = _TAGS.get(p.values.dtype)
        if tag is None:
            raise DataError(f"unsupported checkpoint dtype {p.values.dtype} for {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(tag)
        chunks.append(struct.pack("<I", p.values.ndim))
        chunks.append(struct.pack(f"<{p.values.ndim}I", *p.values.shape))
        chunks.append(np.ascontiguousarray(p.values, dtype=_DTYPES[tag]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            tag = raw[offset:offset + 1]
            offset += 1
            dtype = _DTYPES.get(tag)
            if dtype is None:
                raise DataError(f"{path}: unknown precision tag {tag!r}")
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            values = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                                   offset=offset).reshape(shape)
            offset += nbytes
            out[name] = values.astype(dtype.newbyteorder("="), copy=True)
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    return out


def checkpoint_digest(params: dict[str, Tensor]) -> str:
    """Order-independent content hash of a parameter map."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(params[name].values.tobytes())
    return h.hexdigest()
