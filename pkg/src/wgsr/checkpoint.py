"""
Flat binary parameter checkpoints.

Layout, all integers little-endian:

    magic      4 bytes   b"WGSR"
    version    u16       1
    count      u32       number of tensor records
    meta_len   u32       length of the metadata blob
    meta       bytes     UTF-8 JSON (seed, config hash, step, kind, ...)
    count x record:
        name_len  u16
        name      UTF-8 bytes
        dtype     u8      1 = float32, 2 = float64
        rank      u8
        dims      rank x u32
        payload   little-endian values, C order
"""
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .errors import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"WGSR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode(tensors: Dict[str, np.ndarray], meta: Dict[str, Any]) -> bytes:
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors)), struct.pack("<I", len(meta_blob)), meta_blob]
    for name, values in tensors.items():
        values = np.asarray(values)
        code = _CODES.get(values.dtype)
        if code is None:
            raise CheckpointFormatError(f"Unsupported dtype {values.dtype} for '{name}'")
        name_blob = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_blob)))
        parts.append(name_blob)
        parts.append(struct.pack("<BB", code, values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(np.ascontiguousarray(values, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointFormatError("Checkpoint is truncated")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointFormatError("Not a wgsr checkpoint (bad magic)")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointFormatError(f"Unknown dtype code {code} for '{name}'")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(bytes(take(nbytes)), dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if offset != len(view):
        raise CheckpointFormatError("Trailing bytes after the last tensor record")
    return tensors, meta


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode(tensors, meta))
    logger.info("Saved checkpoint %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointFormatError(f"Cannot read checkpoint {path}: {e}") from e
    return decode(blob)
