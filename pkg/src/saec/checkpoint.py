"""Versioned binary checkpoint of named float64 tensors.

Layout (little-endian)::

    b"SAEC"  uint32 version  uint32 count
    count x { uint32 name_len, name (utf-8), uint32 rank, rank x uint64 dim, prod(dims) x float64 }
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SAEC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("bad magic bytes: not a SAEC checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save_arrays(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(arrays))
    os.replace(tmp, path)


def load_arrays(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_checkpoint(path, trainer) -> None:
    save_arrays(path, trainer.state_arrays())


def load_checkpoint(path, trainer) -> None:
    """Restore ``trainer`` in place; shapes are validated against its config."""
    arrays = load_arrays(path)
    try:
        trainer.load_state_arrays(arrays)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc}") from None
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
