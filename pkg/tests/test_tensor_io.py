"""Tests for the TensorFile codec."""

import struct

import numpy as np
import pytest

from src.utils.tensor_io import decode_tensor, encode_tensor, read_tensor, write_tensor
from src.utils.validators import TensorFormatError


class TestTensorFile:
    """Test encoding, decoding and rejection of malformed files."""

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_file_is_bit_identical(self, tmp_path, rng, dtype):
        """Test write-then-read keeps every bit, NaN patterns included."""
        array = rng.normal(size=(3, 4, 5)).astype(dtype)
        array[0, 1, 2] = np.nan
        array[2, 0, 0] = -np.inf
        path = tmp_path / "t.tensor"
        write_tensor(path, array)
        restored = read_tensor(path)
        assert restored.dtype == dtype
        assert restored.shape == array.shape
        assert restored.tobytes() == array.tobytes()

    def test_header_layout(self):
        """Test magic, version, dtype code, ndim and extents."""
        data = encode_tensor(np.zeros((2, 3), dtype=np.float64))
        assert data[:4] == b"CDTN"
        assert data[4] == 1
        assert data[5] == 1
        assert struct.unpack_from("<H", data, 6)[0] == 2
        assert struct.unpack_from("<QQ", data, 8) == (2, 3)
        assert len(data) == 8 + 16 + 6 * 8

    def test_bool_stored_as_float32(self):
        restored = decode_tensor(encode_tensor(np.array([True, False])))
        assert restored.dtype == np.float32
        np.testing.assert_array_equal(restored, [1.0, 0.0])

    def test_scalar(self):
        restored = decode_tensor(encode_tensor(np.float64(2.5)))
        assert restored.shape == ()
        assert restored == 2.5

    def test_bad_magic(self):
        data = bytearray(encode_tensor(np.zeros(2, dtype=np.float32)))
        data[:4] = b"NOPE"
        with pytest.raises(TensorFormatError):
            decode_tensor(bytes(data))

    def test_unknown_version(self):
        data = bytearray(encode_tensor(np.zeros(2, dtype=np.float32)))
        data[4] = 2
        with pytest.raises(TensorFormatError):
            decode_tensor(bytes(data))

    def test_unknown_dtype(self):
        data = bytearray(encode_tensor(np.zeros(2, dtype=np.float32)))
        data[5] = 7
        with pytest.raises(TensorFormatError):
            decode_tensor(bytes(data))

    def test_payload_length(self):
        data = encode_tensor(np.zeros(4, dtype=np.float32))
        with pytest.raises(TensorFormatError):
            decode_tensor(data[:-1])
        with pytest.raises(TensorFormatError):
            decode_tensor(data + b"\x00")

    def test_truncated_header(self):
        with pytest.raises(TensorFormatError):
            decode_tensor(b"CDT")
