"""Input validation helpers and the toolkit exception hierarchy."""

from typing import Optional, Sequence, Tuple
import logging

import numpy as np

from src.utils.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_NUMERIC_ERROR,
    ERROR_SHAPE_MISMATCH,
    ERROR_NON_FINITE,
    ERROR_WRONG_BIN_COUNT,
    ERROR_INDIVISIBLE,
)

logger = logging.getLogger(__name__)


class BevLiftError(Exception):
    """Base exception for toolkit errors."""
    exit_code = EXIT_DATA_ERROR


class ConfigurationError(BevLiftError):
    """Invalid calibration, grid, discretization or settings."""
    exit_code = EXIT_CONFIG_ERROR


class DataError(BevLiftError):
    """Input data violating an operation's preconditions."""
    exit_code = EXIT_DATA_ERROR


class ShapeMismatch(DataError):
    pass


class WrongBinCount(DataError):
    pass


class EmptyDepthMap(DataError):
    pass


class IndivisibleDimensions(DataError):
    pass


class DegenerateScene(DataError):
    pass


class NotNormalized(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class OutOfRange(DataError):
    pass


class NonPositiveDepth(DataError):
    pass


class TensorFormatError(DataError):
    pass


class NumericError(BevLiftError):
    """Numeric failures: non-finite values or failed gradient checks."""
    exit_code = EXIT_NUMERIC_ERROR


class NonFiniteInput(NumericError):
    pass


class NonFiniteEvaluation(NumericError):
    pass


class GradientCheckFailed(NumericError):
    pass


def validate_finite(array: np.ndarray, name: str = "input") -> None:
    """
    Ensure every entry of an array is finite.

    Args:
        array: Array to check
        name: Name used in the error message

    Raises:
        NonFiniteInput: If any entry is NaN or infinite
    """
    if not np.all(np.isfinite(array)):
        raise NonFiniteInput(ERROR_NON_FINITE.format(name=name))


def validate_rank(array: np.ndarray, rank: int, name: str) -> None:
    """Ensure an array has the given number of dimensions."""
    if array.ndim != rank:
        raise ShapeMismatch(
            ERROR_SHAPE_MISMATCH.format(
                detail=f"{name} must have {rank} dims, got shape {array.shape}"
            )
        )


def validate_same_shape(a: np.ndarray, b: np.ndarray, names: Tuple[str, str]) -> None:
    """Ensure two arrays have identical shapes."""
    if a.shape != b.shape:
        raise ShapeMismatch(
            ERROR_SHAPE_MISMATCH.format(
                detail=f"{names[0]} {a.shape} vs {names[1]} {b.shape}"
            )
        )


def validate_leading_dims(
    a: np.ndarray,
    b: np.ndarray,
    count: int,
    names: Tuple[str, str]
) -> None:
    """
    Ensure two arrays agree on their first `count` extents.

    Args:
        a: First array
        b: Second array
        count: Number of leading extents compared
        names: Names used in the error message
    """
    if a.ndim < count or b.ndim < count or a.shape[:count] != b.shape[:count]:
        raise ShapeMismatch(
            ERROR_SHAPE_MISMATCH.format(
                detail=f"{names[0]} {a.shape} and {names[1]} {b.shape} "
                f"disagree on the first {count} extents"
            )
        )


def validate_bin_count(array: np.ndarray, expected: int) -> None:
    """Ensure the last (bin) axis has the expected length."""
    actual = array.shape[-1] if array.ndim else 0
    if actual != expected:
        raise WrongBinCount(ERROR_WRONG_BIN_COUNT.format(expected=expected, actual=actual))


def validate_divisible(extents: Sequence[int], factor: int) -> None:
    """Ensure every extent is divisible by a downsampling factor."""
    if factor < 1:
        raise IndivisibleDimensions(f"Downsample factor must be >= 1, got {factor}")
    for extent in extents:
        if extent % factor:
            raise IndivisibleDimensions(ERROR_INDIVISIBLE.format(extent=extent, factor=factor))


def validate_matrix(
    matrix: np.ndarray,
    shape: Tuple[int, int],
    name: str,
    error: Optional[type] = None
) -> np.ndarray:
    """
    Coerce a matrix to float64 and check its shape and finiteness.

    Args:
        matrix: Matrix-like input
        shape: Required shape
        name: Name used in error messages
        error: Exception class raised on violation (default ConfigurationError)

    Returns:
        The matrix as a float64 array
    """
    error_cls = error or ConfigurationError
    array = np.asarray(matrix, dtype=np.float64)
    if array.shape != shape:
        raise error_cls(f"{name} must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise error_cls(ERROR_NON_FINITE.format(name=name))
    return array
