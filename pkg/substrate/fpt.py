# File: substrate/fpt.py

"""
FPT1 raw tensor format.

Layout: magic ``FPT1``, u32 version (1), u32 rank, rank x u32 dims, u8 dtype
code (0 = f32), then the row-major little-endian float32 payload. All header
integers are little-endian.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from errors import DataError

__all__ = ["MAGIC", "VERSION", "encode_fpt", "decode_fpt", "save_fpt", "load_fpt"]

MAGIC = b"FPT1"
VERSION = 1
DTYPE_F32 = 0

ArrayLike = Union[np.ndarray, torch.Tensor]


def _to_numpy(tensor: ArrayLike) -> np.ndarray:
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().numpy()
    return np.ascontiguousarray(tensor, dtype="<f4")


def encode_fpt(tensor: ArrayLike) -> bytes:
    array = _to_numpy(tensor)
    header = MAGIC + struct.pack("<II", VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<B", DTYPE_F32)
    return header + array.tobytes(order="C")


def decode_fpt(blob: bytes) -> np.ndarray:
    if len(blob) < 13 or blob[:4] != MAGIC:
        raise DataError("not an FPT1 blob (bad magic)")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported FPT1 version {version}")
    offset = 12
    if len(blob) < offset + 4 * rank + 1:
        raise DataError("truncated FPT1 header")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    (dtype,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if dtype != DTYPE_F32:
        raise DataError(f"unsupported FPT1 dtype code {dtype}")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(blob) - offset != 4 * count:
        raise DataError(f"FPT1 payload holds {len(blob) - offset} bytes, expected {4 * count}")
    array = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return array.reshape(dims).astype(np.float32)


def save_fpt(path: Union[str, Path], tensor: ArrayLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_fpt(tensor))
    return path


def load_fpt(path: Union[str, Path]) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    return torch.from_numpy(decode_fpt(path.read_bytes()).copy())
