#!/usr/bin/env python3
"""
Tests for the VFST binary tensor format.
"""

import os
import struct
import tempfile

import numpy as np
import pytest

from vfs_lab.errors import FormatError
from vfs_lab.tensor import Tensor
from vfs_lab.tensor_io import decode_tensor, encode_tensor, load_tensor, save_tensor


def test_header_layout():
    data = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert data[:4] == b"VFST"
    version, code, rank = struct.unpack_from("<BBB", data, 4)
    assert (version, code, rank) == (1, 1, 2)
    assert struct.unpack_from("<2Q", data, 7) == (2, 3)
    payload = np.frombuffer(data[7 + 16:], dtype="<f4")
    np.testing.assert_array_equal(payload, np.arange(6, dtype=np.float32))


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int32])
def test_file_round_trip(dtype):
    array = (np.random.default_rng(0).standard_normal((3, 4, 2)) * 100).astype(dtype)
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "t.vfst")
        save_tensor(path, array)
        loaded = load_tensor(path)
    assert loaded.dtype == array.dtype
    assert loaded.tobytes() == array.tobytes()


def test_tensor_and_scalar_values():
    scalar = np.array(3.5)
    decoded, end = decode_tensor(encode_tensor(scalar))
    assert decoded.shape == () and decoded == 3.5
    wrapped, _ = decode_tensor(encode_tensor(Tensor(np.ones((2, 2)))))
    np.testing.assert_array_equal(wrapped, np.ones((2, 2)))


def test_consecutive_tensors_share_a_buffer():
    a, b = np.ones((2, 2), dtype=np.float64), np.arange(3, dtype=np.int32)
    buffer = encode_tensor(a) + encode_tensor(b)
    first, offset = decode_tensor(buffer, 0)
    second, end = decode_tensor(buffer, offset)
    np.testing.assert_array_equal(first, a)
    np.testing.assert_array_equal(second, b)
    assert end == len(buffer)


def test_errors_carry_offsets():
    good = encode_tensor(np.zeros(4, dtype=np.float32))
    with pytest.raises(FormatError, match="byte offset 0"):
        decode_tensor(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="truncated tensor payload"):
        decode_tensor(good[:-1])
    with pytest.raises(FormatError, match="unknown dtype code"):
        decode_tensor(good[:5] + bytes([9]) + good[6:])
    with pytest.raises(FormatError):
        encode_tensor(np.zeros(2, dtype=np.int64))


def test_trailing_bytes_rejected():
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "t.vfst")
        with open(path, "wb") as f:
            f.write(encode_tensor(np.zeros(2, dtype=np.float32)) + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_tensor(path)
