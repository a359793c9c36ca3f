"""TensorFile codec: a small self-describing binary container for dense arrays.

Layout (all little-endian)::

    b"CDTN" | u8 version | u8 dtype | u16 ndim | ndim x u64 extents | payload

dtype 0 is float32 and 1 is float64; the payload is row-major.
"""

import struct
from pathlib import Path
from typing import Union
import logging

import numpy as np

from src.utils.constants import (
    TENSOR_MAGIC,
    TENSOR_VERSION,
    TENSOR_DTYPES,
    tensor_dtype_code,
)
from src.utils.validators import TensorFormatError

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sBBH")
_EXTENT = struct.Struct("<Q")

PathLike = Union[str, Path]


def encode_tensor(array: np.ndarray) -> bytes:
    """
    Serialize an array to TensorFile bytes.

    Boolean and integer arrays are stored as float32; float arrays keep
    their width (float32 or float64).

    Args:
        array: Array to encode

    Returns:
        Encoded bytes
    """
    array = np.asarray(array)
    if array.dtype == np.float64:
        payload = array.astype("<f8", copy=False)
    else:
        payload = array.astype("<f4", copy=False)
    code = tensor_dtype_code(payload.dtype.str)

    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, code, payload.ndim)
    extents = b"".join(_EXTENT.pack(extent) for extent in payload.shape)
    return header + extents + np.ascontiguousarray(payload).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    """
    Parse TensorFile bytes.

    Args:
        data: Encoded bytes

    Returns:
        Native-endian array with the stored dtype and shape

    Raises:
        TensorFormatError: On bad magic, unknown version/dtype or size mismatch
    """
    if len(data) < _HEADER.size:
        raise TensorFormatError("Tensor file truncated before header end")

    magic, version, code, ndim = _HEADER.unpack_from(data, 0)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"Bad tensor magic: {magic!r}")
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"Unsupported tensor version: {version}")
    if code not in TENSOR_DTYPES:
        raise TensorFormatError(f"Unsupported tensor dtype code: {code}")

    offset = _HEADER.size
    if len(data) < offset + ndim * _EXTENT.size:
        raise TensorFormatError("Tensor file truncated inside extents")
    shape = tuple(
        _EXTENT.unpack_from(data, offset + i * _EXTENT.size)[0] for i in range(ndim)
    )
    offset += ndim * _EXTENT.size

    dtype = np.dtype(TENSOR_DTYPES[code])
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != expected:
        raise TensorFormatError(
            f"Payload holds {len(data) - offset} bytes, expected {expected} for shape {shape}"
        )

    array = np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape)
    return array.astype(dtype.newbyteorder("="))


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    """Write an array to a TensorFile."""
    data = encode_tensor(array)
    Path(path).write_bytes(data)
    logger.info(f"Wrote tensor {tuple(np.shape(array))} to {path}")


def read_tensor(path: PathLike) -> np.ndarray:
    """Read an array from a TensorFile."""
    array = decode_tensor(Path(path).read_bytes())
    logger.debug(f"Read tensor {array.shape} ({array.dtype}) from {path}")
    return array
