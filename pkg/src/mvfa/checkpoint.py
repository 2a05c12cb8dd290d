"""Binary checkpoint format for named float64 parameters.

Layout: the magic bytes ``MVFA1\\n`` followed by one record per parameter
(sorted by name): u32 name length, UTF-8 name, u32 rank, u32 extents, then
the raw little-endian float64 payload in row-major order.  All integers are
little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import DataError

MAGIC = b"MVFA1\n"


def save_checkpoint(path, params: dict) -> None:
    out = bytearray(MAGIC)
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(
            value.data if isinstance(value, Tensor) else value,
            dtype="<f8")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    params: dict[str, np.ndarray] = {}
    while pos < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: truncated checkpoint record") from exc
        params[name] = arr.reshape(shape).astype(np.float64)
    return params
