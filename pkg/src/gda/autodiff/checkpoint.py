"""GDAM checkpoint files.

Layout (little-endian)::

    b"GDAM" | version u32 | seed u64 | step u64 | count u32
    count x ( name_len u32 | utf-8 name | ndim u32 | dims u32[ndim] | f64[prod(dims)] )
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GDAM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, params: dict, seed: int = 0, step: int = 0):
    parts = [MAGIC, struct.pack("<IQQI", VERSION, seed, step, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path):
    """Return ``(params, meta)`` where meta holds ``seed`` and ``step``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, seed, step, count = struct.unpack_from("<IQQI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 4 + 24
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if off + size > len(buf):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            params[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
            off += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header ({exc})") from None
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return params, {"seed": seed, "step": step}
