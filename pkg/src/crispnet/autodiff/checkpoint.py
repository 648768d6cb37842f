"""Binary checkpoint container.

Layout (little-endian): ``b"CRSP"``, u32 version, u32 length + UTF-8
config text, u32 tensor count, then per tensor u32 length + UTF-8 name,
u32 rank, u32 extents, raw float32 data.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CRSP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def dumps(tensors: Mapping[str, np.ndarray], config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _str(config_text), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(_str(name))
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a CRSP checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_str():
        nonlocal pos
        (n,) = take("<I")
        s = blob[pos:pos + n].decode("utf-8")
        pos += n
        return s

    try:
        (version,) = take("<I")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = take_str()
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            name = take_str()
            (rank,) = take("<I")
            shape = take(f"<{rank}I") if rank else ()
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:  # ValueError: short tensor buffer or bad utf-8
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return tensors, config


def save(path, tensors: Mapping[str, np.ndarray], config_text: str = "") -> None:
    Path(path).write_bytes(dumps(tensors, config_text))


def load(path) -> tuple[dict[str, np.ndarray], str]:
    return loads(Path(path).read_bytes())
