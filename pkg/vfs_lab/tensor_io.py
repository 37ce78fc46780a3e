"""
Binary tensor files.

Layout: magic b"VFST", u8 version, u8 dtype code, u8 rank, rank x u64 extents
(little endian), then the row-major little-endian payload.
"""

import struct
from typing import Tuple, Union

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"VFST"
VERSION = 1

DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int32): 3}

_HEADER = struct.Struct("<4sBBB")


def encode_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    """Serialise an array (float32, float64 or int32) to bytes."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    code = _CODE_OF.get(array.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {array.dtype} for tensor file")
    header = _HEADER.pack(MAGIC, VERSION, code, array.ndim)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    return header + extents + payload


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Read one tensor starting at `offset`.

    Returns:
        Tuple of (array in native byte order, offset just past the payload)
    """
    if len(buffer) - offset < _HEADER.size:
        raise FormatError("truncated tensor header", offset)
    magic, version, code, rank = _HEADER.unpack_from(buffer, offset)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}", offset)
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}", offset + 4)
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset + 5)
    cursor = offset + _HEADER.size
    if len(buffer) - cursor < 8 * rank:
        raise FormatError("truncated tensor extents", cursor)
    shape = struct.unpack_from(f"<{rank}Q", buffer, cursor)
    cursor += 8 * rank
    dtype = DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buffer) - cursor < nbytes:
        raise FormatError(f"truncated tensor payload, expected {nbytes} bytes", cursor)
    array = np.frombuffer(buffer, dtype=dtype, count=nbytes // dtype.itemsize, offset=cursor)
    array = array.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    return array, cursor + nbytes


def save_tensor(path: str, value: Union[Tensor, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(value))


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        buffer = f.read()
    array, end = decode_tensor(buffer, 0)
    if end != len(buffer):
        raise FormatError("trailing bytes after tensor payload", end)
    return array
