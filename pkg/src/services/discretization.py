"""Mapping between continuous depth and categorical depth bins (UD, SID, LID)."""

from functools import lru_cache
from typing import Any, Dict, List, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.utils.constants import (
    DEFAULT_D_MAX,
    DEFAULT_D_MIN,
    DEFAULT_NUM_BINS,
    DiscretizationMode,
    ERROR_INDEX_OUT_OF_RANGE,
    ERROR_OUT_OF_RANGE,
)
from src.utils.validators import (
    ConfigurationError,
    IndexOutOfRange,
    NonFiniteInput,
    OutOfRange,
)

logger = logging.getLogger(__name__)


class DiscretizationSpec(BaseModel):
    """
    Depth range [d_min, d_max] split into D bins.

    When `overflow_bin` is set, depths outside the range map to the extra
    bin index D instead of raising.
    """

    model_config = ConfigDict(frozen=True)

    mode: DiscretizationMode = DiscretizationMode.LID
    d_min: float = DEFAULT_D_MIN
    d_max: float = DEFAULT_D_MAX
    num_bins: int = Field(default=DEFAULT_NUM_BINS)
    overflow_bin: bool = True

    @model_validator(mode="after")
    def _check_range(self) -> "DiscretizationSpec":
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max)):
            raise ConfigurationError("Depth range must be finite")
        if self.num_bins < 1:
            raise ConfigurationError(f"num_bins must be >= 1, got {self.num_bins}")
        if self.d_min < 0 or self.d_max <= self.d_min:
            raise ConfigurationError(
                f"Depth range must satisfy 0 <= d_min < d_max, got [{self.d_min}, {self.d_max}]"
            )
        if self.mode == DiscretizationMode.SID and self.d_min <= 0:
            raise ConfigurationError("SID discretization requires d_min > 0")
        return self

    @property
    def total_bins(self) -> int:
        """Bins in a predicted distribution, overflow bin included."""
        return self.num_bins + 1 if self.overflow_bin else self.num_bins

    @property
    def edges(self) -> np.ndarray:
        """Read-only float64 array of the D + 1 bin edges."""
        return _edge_table(self)[0]

    @property
    def centers(self) -> np.ndarray:
        """Read-only float64 array of the D bin centers (edge midpoints)."""
        return _edge_table(self)[1]

    def fingerprint(self) -> bytes:
        """Bytes identifying this spec, used for cache keys."""
        return self.model_dump_json().encode()


@lru_cache(maxsize=64)
def _edge_table(spec: DiscretizationSpec) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.array([_edge(spec, i) for i in range(spec.num_bins + 1)])
    centers = 0.5 * (edges[:-1] + edges[1:])
    edges.flags.writeable = False
    centers.flags.writeable = False
    return edges, centers


def _edge(spec: DiscretizationSpec, i: int) -> float:
    D = spec.num_bins
    if i == 0:
        return spec.d_min
    if i == D:
        return spec.d_max
    span = spec.d_max - spec.d_min
    if spec.mode == DiscretizationMode.UD:
        return spec.d_min + span * i / D
    if spec.mode == DiscretizationMode.SID:
        return float(np.exp(np.log(spec.d_min) + np.log(spec.d_max / spec.d_min) * i / D))
    return spec.d_min + span * i * (i + 1) / (D * (D + 1))


def bin_edge(spec: DiscretizationSpec, i: int) -> float:
    """
    Depth of bin edge i.

    Args:
        spec: Discretization spec
        i: Edge index in [0, D]

    Returns:
        Edge depth in meters

    Raises:
        IndexOutOfRange: If i is outside [0, D]
    """
    if not 0 <= i <= spec.num_bins:
        raise IndexOutOfRange(ERROR_INDEX_OUT_OF_RANGE.format(index=i, num_bins=spec.num_bins))
    return float(spec.edges[i])


def bin_edges(spec: DiscretizationSpec) -> np.ndarray:
    """All D + 1 edges, float64."""
    return spec.edges.copy()


def bin_centers(spec: DiscretizationSpec) -> np.ndarray:
    """All D bin centers, float64."""
    return spec.centers.copy()


def bin_widths(spec: DiscretizationSpec) -> np.ndarray:
    """All D bin widths, float64."""
    return np.diff(spec.edges)


def depths_to_bins(spec: DiscretizationSpec, depths: np.ndarray) -> np.ndarray:
    """
    Vectorized bin lookup.

    Out-of-range depths map to D when the spec carries an overflow bin.

    Args:
        spec: Discretization spec
        depths: Array of depths in meters

    Returns:
        int64 array of bin indices with the shape of `depths`

    Raises:
        NonFiniteInput: If any depth is NaN or infinite
        OutOfRange: If a depth is out of range and no overflow bin exists
    """
    depths = np.asarray(depths, dtype=np.float64)
    if not np.all(np.isfinite(depths)):
        raise NonFiniteInput("Depths must be finite")
    indices = np.searchsorted(spec.edges, depths, side="right") - 1
    outside = (depths < spec.d_min) | (depths >= spec.d_max)
    if np.any(outside):
        if not spec.overflow_bin:
            first = float(depths[outside].flat[0])
            raise OutOfRange(
                ERROR_OUT_OF_RANGE.format(depth=first, d_min=spec.d_min, d_max=spec.d_max)
            )
        indices = np.where(outside, spec.num_bins, indices)
    return indices.astype(np.int64)


def depth_to_bin(spec: DiscretizationSpec, d_c: float) -> int:
    """
    Bin index i with edge(i) <= d_c < edge(i + 1).

    Args:
        spec: Discretization spec
        d_c: Continuous depth in meters

    Returns:
        Bin index, or D for out-of-range depths when the overflow bin is enabled
    """
    return int(depths_to_bins(spec, np.array([d_c]))[0])


def depths_to_fractional_bins(spec: DiscretizationSpec, depths: np.ndarray) -> np.ndarray:
    """
    Continuous bin coordinates, linear in depth between adjacent bin centers.

    Depths are not range-checked; values beyond the first or last center
    clamp to 0 or D - 1.

    Args:
        spec: Discretization spec
        depths: Array of depths in meters

    Returns:
        float64 array with the shape of `depths`
    """
    depths = np.asarray(depths, dtype=np.float64)
    if spec.num_bins == 1:
        return np.zeros_like(depths)
    return np.interp(depths, spec.centers, np.arange(spec.num_bins, dtype=np.float64))


def depth_to_fractional_bin(spec: DiscretizationSpec, d_c: float) -> float:
    """
    Real-valued bin coordinate of a depth.

    Args:
        spec: Discretization spec
        d_c: Depth in meters, within [d_min, d_max]

    Returns:
        Coordinate r in [0, D - 1]; r = k exactly at the center of bin k

    Raises:
        OutOfRange: If d_c is outside [d_min, d_max]
    """
    if not spec.d_min <= d_c <= spec.d_max:
        raise OutOfRange(ERROR_OUT_OF_RANGE.format(depth=d_c, d_min=spec.d_min, d_max=spec.d_max))
    return float(depths_to_fractional_bins(spec, np.array([d_c]))[0])


def discretization_table(spec: DiscretizationSpec) -> List[Dict[str, Union[int, float]]]:
    """
    Rows of (index, edge, center, width) for every bin.

    Args:
        spec: Discretization spec

    Returns:
        One dictionary per bin, in index order
    """
    edges = spec.edges
    return [
        {
            "index": i,
            "edge": float(edges[i]),
            "center": float(spec.centers[i]),
            "width": float(edges[i + 1] - edges[i]),
        }
        for i in range(spec.num_bins)
    ]


def describe(spec: DiscretizationSpec) -> Dict[str, Any]:
    """Summary of a spec for logs."""
    widths = bin_widths(spec)
    return {
        "mode": spec.mode.value,
        "range": (spec.d_min, spec.d_max),
        "num_bins": spec.num_bins,
        "overflow_bin": spec.overflow_bin,
        "min_width": float(widths.min()),
        "max_width": float(widths.max()),
    }
