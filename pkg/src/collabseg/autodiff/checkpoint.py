"""Versioned binary parameter checkpoints.

Layout (all integers little-endian)::

    magic   8 bytes   b"CSEGCKPT"
    version uint32    currently 1
    count   uint32    number of tensors
    per tensor:
        name_len uint16, name utf-8
        ndim     uint8,  dims uint32 * ndim
        payload  float32 little-endian, row-major
"""

import struct
from pathlib import Path

import numpy as np

from ..exceptions import CollabSegError

MAGIC = b"CSEGCKPT"
VERSION = 1


class CheckpointError(CollabSegError, ValueError):
    pass


def save_checkpoint(path, state):
    """Write ``state`` (name -> array) to ``path``."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path):
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    state = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            nbytes = 4 * int(np.prod(shape))
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            state[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    return state
