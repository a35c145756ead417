"""Binary tensor format shared by checkpoints and dataset slices.

Layout (little-endian)::

    b"RMDS" | version u32 | rank u32 | dims u32 * rank | float32 * prod(dims)
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

MAGIC = b"RMDS"
VERSION = 1


class FormatError(ValueError):
    """Raised when a byte stream is not a valid RMDS tensor."""


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def read_tensor(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    head = stream.read(8)
    if len(head) != 8:
        raise FormatError("truncated header")
    version, rank = struct.unpack("<II", head)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    raw = stream.read(4 * rank)
    if len(raw) != 4 * rank:
        raise FormatError("truncated dims")
    dims = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(dims)) if rank else 1
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(f"truncated payload: expected {4 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path: Union[str, Path], arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
