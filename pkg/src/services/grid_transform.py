"""Frustum-to-voxel resampling, BEV collapse and channel reduction.

Sampling and scatter work on fixed-size chunks of points. Chunk boundaries
never depend on the worker count. Threads compute per-chunk scatter
contributions; a single accumulator applies them in chunk order, so results
are bit-identical for any number of threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, TypeVar
import logging

import numpy as np

from src.config.settings import settings
from src.services.discretization import DiscretizationSpec, depths_to_fractional_bins
from src.services.geometry import (
    CameraCalibration,
    GridSpec,
    image_to_feature_coords,
    project_points,
    transform_points,
    voxel_centers,
)
from src.utils.cache import SamplingCache, get_cache
from src.utils.constants import MIN_PROJECTIVE_DEPTH, SamplingMode
from src.utils.validators import (
    ShapeMismatch,
    validate_rank,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

_CORNERS = list(product((0, 1), repeat=3))


@dataclass
class VoxelGrid:
    """Voxel features X x Y x Z x C on a metric grid."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self) -> None:
        validate_rank(self.values, 4, "voxel values")
        if self.values.shape[:3] != self.grid.dims:
            raise ShapeMismatch(
                f"Voxel values {self.values.shape[:3]} do not match grid {self.grid.dims}"
            )

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "shape": tuple(self.values.shape),
            "grid": self.grid.model_dump(),
            "nonzero": int(np.count_nonzero(np.any(self.values != 0, axis=-1))),
        }


@dataclass
class BEVGrid:
    """Bird's-eye-view features X x Y x C_out."""

    values: np.ndarray

    def __post_init__(self) -> None:
        validate_rank(self.values, 3, "BEV values")

    @property
    def channels(self) -> int:
        return int(self.values.shape[-1])

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "shape": tuple(self.values.shape),
            "max": float(self.values.max()) if self.values.size else 0.0,
        }


def _chunks(count: int, chunk_size: int) -> List[slice]:
    return [slice(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]


def _run_ordered(
    func: Callable[[slice], T],
    chunks: List[slice],
    workers: int
) -> Iterator[T]:
    """Apply func to every chunk, yielding results in chunk order."""
    if workers <= 1 or len(chunks) <= 1:
        for chunk in chunks:
            yield func(chunk)
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        yield from executor.map(func, chunks)


def _resolve_parallelism(workers: Optional[int], chunk_size: Optional[int]) -> Tuple[int, int]:
    return (workers or settings.num_workers, chunk_size or settings.chunk_size)


def _corner_weights(
    coords: np.ndarray,
    mask: np.ndarray,
    shape: Tuple[int, int, int],
    mode: SamplingMode
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Flat cell indices and interpolation weights of every sampling corner.

    Points outside half a cell of the border, or masked out, get zero weight.

    Returns:
        (indices, weights): one array of length N per corner
    """
    coords = np.asarray(coords, dtype=np.float64)
    valid = np.asarray(mask, dtype=bool) & np.all(np.isfinite(coords), axis=1)

    lower: List[np.ndarray] = []
    upper: List[np.ndarray] = []
    fractions: List[np.ndarray] = []
    for axis, size in enumerate(shape):
        x = np.where(valid, coords[:, axis], 0.0)
        valid &= (x >= -0.5) & (x <= size - 0.5)
        x = np.clip(x, 0.0, size - 1)
        if mode == SamplingMode.NEAREST:
            i0 = np.minimum(np.floor(x + 0.5), size - 1).astype(np.int64)
            f = np.zeros_like(x)
        elif size == 1:
            i0 = np.zeros(x.shape, dtype=np.int64)
            f = np.zeros_like(x)
        else:
            i0 = np.minimum(np.floor(x), size - 2).astype(np.int64)
            f = x - i0
        lower.append(i0)
        upper.append(np.minimum(i0 + 1, size - 1))
        fractions.append(f)

    strides = (shape[1] * shape[2], shape[2], 1)
    indices = []
    weights = []
    corners = [(0, 0, 0)] if mode == SamplingMode.NEAREST else _CORNERS
    for offsets in corners:
        index = np.zeros(coords.shape[0], dtype=np.int64)
        weight = valid.astype(np.float64)
        for axis, offset in enumerate(offsets):
            cell = upper[axis] if offset else lower[axis]
            index += cell * strides[axis]
            weight = weight * (fractions[axis] if offset else 1.0 - fractions[axis])
        indices.append(index)
        weights.append(weight)
    return indices, weights


def _check_sampling_inputs(frustum: np.ndarray, coords: np.ndarray, mask: np.ndarray) -> None:
    validate_rank(frustum, 4, "frustum")
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeMismatch(f"coords must be N x 3, got {coords.shape}")
    if mask.shape != coords.shape[:1]:
        raise ShapeMismatch(f"mask {mask.shape} does not match coords {coords.shape}")


def trilinear_sample(
    frustum: np.ndarray,
    coords: np.ndarray,
    mask: np.ndarray,
    mode: SamplingMode = SamplingMode.TRILINEAR,
    workers: Optional[int] = None,
    chunk_size: Optional[int] = None
) -> np.ndarray:
    """
    Sample frustum features at continuous (u_f, v_f, r) coordinates.

    Args:
        frustum: W_F x H_F x D x C frustum grid
        coords: N x 3 sampling coordinates
        mask: N validity flags; invalid points yield the zero vector
        mode: TRILINEAR (8-corner) or NEAREST (closest cell)
        workers: Worker threads (default from settings)
        chunk_size: Points per chunk (default from settings)

    Returns:
        N x C samples with the frustum's dtype
    """
    coords = np.asarray(coords)
    mask = np.asarray(mask, dtype=bool)
    _check_sampling_inputs(frustum, coords, mask)
    workers, chunk_size = _resolve_parallelism(workers, chunk_size)
    mode = SamplingMode(mode)

    shape = frustum.shape[:3]
    flat = frustum.reshape(-1, frustum.shape[3])

    def sample_chunk(chunk: slice) -> np.ndarray:
        indices, weights = _corner_weights(coords[chunk], mask[chunk], shape, mode)
        out = np.zeros((len(indices[0]), flat.shape[1]), dtype=np.float64)
        for index, weight in zip(indices, weights):
            out += weight[:, None] * flat[index]
        return out

    parts = list(_run_ordered(sample_chunk, _chunks(coords.shape[0], chunk_size), workers))
    if not parts:
        return np.zeros((0, flat.shape[1]), dtype=frustum.dtype)
    return np.concatenate(parts, axis=0).astype(frustum.dtype)


def trilinear_sample_backward(
    frustum: np.ndarray,
    coords: np.ndarray,
    mask: np.ndarray,
    upstream_grad: np.ndarray,
    mode: SamplingMode = SamplingMode.TRILINEAR,
    workers: Optional[int] = None,
    chunk_size: Optional[int] = None
) -> np.ndarray:
    """
    Scatter sample gradients back onto the frustum cells.

    Each upstream row is distributed to its corner cells with the forward
    interpolation weights. Gradients with respect to the coordinates are not
    computed.

    Args:
        frustum: W_F x H_F x D x C frustum (shape and dtype reference)
        coords: N x 3 sampling coordinates
        mask: N validity flags
        upstream_grad: N x C gradient of the samples
        mode: Sampling mode used in the forward pass
        workers: Worker threads (default from settings)
        chunk_size: Points per chunk (default from settings)

    Returns:
        Gradient with the frustum's shape and dtype
    """
    coords = np.asarray(coords)
    mask = np.asarray(mask, dtype=bool)
    _check_sampling_inputs(frustum, coords, mask)
    channels = frustum.shape[3]
    if upstream_grad.shape != (coords.shape[0], channels):
        raise ShapeMismatch(
            f"upstream_grad {upstream_grad.shape} vs expected {(coords.shape[0], channels)}"
        )
    workers, chunk_size = _resolve_parallelism(workers, chunk_size)
    mode = SamplingMode(mode)

    shape = frustum.shape[:3]
    cells = int(np.prod(shape))
    upstream = np.asarray(upstream_grad, dtype=np.float64)

    def scatter_chunk(chunk: slice) -> List[Tuple[np.ndarray, np.ndarray]]:
        indices, weights = _corner_weights(coords[chunk], mask[chunk], shape, mode)
        rows = upstream[chunk]
        return [(index, weight[:, None] * rows) for index, weight in zip(indices, weights)]

    # contributions are applied in chunk order, so the sum does not depend on workers
    grad = np.zeros((cells, channels), dtype=np.float64)
    for contributions in _run_ordered(scatter_chunk, _chunks(coords.shape[0], chunk_size), workers):
        for index, values in contributions:
            np.add.at(grad, index, values)
    return grad.reshape(frustum.shape).astype(frustum.dtype)


def frustum_sample_coords(
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    centers: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Continuous frustum coordinates (u_f, v_f, r) of metric points.

    Points are moved into the camera frame with the calibration's extrinsic,
    projected, scaled to feature resolution, and their depth mapped to a
    fractional bin. Invalid points keep zero coordinates.

    Args:
        calib: Camera calibration
        disc: Discretization spec
        centers: ... x 3 metric points (typically voxel centers)

    Returns:
        (coords, mask): float32 ... x 3 coordinates and boolean ... validity
    """
    centers = np.asarray(centers)
    if centers.shape[-1] != 3:
        raise ShapeMismatch(f"centers must end in 3 components, got {centers.shape}")
    lead = centers.shape[:-1]

    camera_points = transform_points(calib.extrinsic, centers.reshape(-1, 3))
    uv, depth = project_points(calib, camera_points)
    u_f, v_f = image_to_feature_coords(uv[:, 0], uv[:, 1], calib.feature_downsample)
    r = depths_to_fractional_bins(disc, depth)

    with np.errstate(invalid="ignore"):
        mask = (
            (depth > MIN_PROJECTIVE_DEPTH)
            & (u_f >= 0) & (u_f <= calib.feature_width - 1)
            & (v_f >= 0) & (v_f <= calib.feature_height - 1)
            & (depth >= disc.d_min) & (depth <= disc.d_max)
        )
    coords = np.stack([u_f, v_f, r], axis=-1)
    coords[~mask] = 0.0

    logger.debug(f"Sampling coords: {int(mask.sum())}/{mask.size} points inside the frustum")
    return coords.astype(np.float32).reshape(lead + (3,)), mask.reshape(lead)


def _check_frustum(frustum: np.ndarray, calib: CameraCalibration, disc: DiscretizationSpec) -> None:
    validate_rank(frustum, 4, "frustum")
    expected = (calib.feature_width, calib.feature_height, disc.num_bins)
    if frustum.shape[:3] != expected:
        raise ShapeMismatch(f"Frustum {frustum.shape[:3]} vs calibration/discretization {expected}")


def voxel_sample_coords(
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    grid: GridSpec,
    cache: Optional[SamplingCache] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flattened sampling coordinates of every voxel center, memoized.

    Returns:
        (coords, mask): N x 3 and N arrays, N = X * Y * Z
    """
    cache = cache or get_cache()
    key = cache.make_key(
        calib.fingerprint(), disc.fingerprint(), grid.model_dump_json().encode()
    )
    cached = cache.get(key)
    if cached is not None:
        return cached

    coords, mask = frustum_sample_coords(calib, disc, voxel_centers(grid))
    coords, mask = coords.reshape(-1, 3), mask.reshape(-1)
    cache.set(key, coords, mask)
    return coords, mask


def frustum_to_voxel(
    frustum: np.ndarray,
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    grid: GridSpec,
    mode: SamplingMode = SamplingMode.TRILINEAR,
    workers: Optional[int] = None,
    cache: Optional[SamplingCache] = None
) -> VoxelGrid:
    """
    Resample frustum features onto the voxel grid.

    Args:
        frustum: W_F x H_F x D x C frustum grid
        calib: Camera calibration
        disc: Discretization spec (overflow bin excluded from the frustum)
        grid: Voxel grid spec
        mode: Sampling mode
        workers: Worker threads (default from settings)
        cache: Sampling-coordinate cache (default global cache)

    Returns:
        VoxelGrid of shape X x Y x Z x C
    """
    _check_frustum(frustum, calib, disc)
    coords, mask = voxel_sample_coords(calib, disc, grid, cache)
    samples = trilinear_sample(frustum, coords, mask, mode=mode, workers=workers)
    values = samples.reshape(grid.dims + (frustum.shape[3],))
    logger.info(f"Frustum {frustum.shape} -> voxels {values.shape}")
    return VoxelGrid(values=values, grid=grid)


def frustum_to_voxel_backward(
    frustum: np.ndarray,
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    grid: GridSpec,
    upstream_grad: np.ndarray,
    mode: SamplingMode = SamplingMode.TRILINEAR,
    workers: Optional[int] = None,
    cache: Optional[SamplingCache] = None
) -> np.ndarray:
    """Gradient of `frustum_to_voxel` with respect to the frustum values."""
    _check_frustum(frustum, calib, disc)
    expected = grid.dims + (frustum.shape[3],)
    if upstream_grad.shape != expected:
        raise ShapeMismatch(f"upstream_grad {upstream_grad.shape} vs expected {expected}")
    coords, mask = voxel_sample_coords(calib, disc, grid, cache)
    return trilinear_sample_backward(
        frustum,
        coords,
        mask,
        upstream_grad.reshape(-1, frustum.shape[3]),
        mode=mode,
        workers=workers,
    )


def collapse_to_bev(voxels: VoxelGrid) -> BEVGrid:
    """
    Concatenate the vertical axis into channels.

    out[x, y, k * C + c] = V[x, y, k, c]

    Args:
        voxels: X x Y x Z x C voxel grid

    Returns:
        BEVGrid with Z * C channels
    """
    X, Y, Z, C = voxels.values.shape
    return BEVGrid(values=voxels.values.reshape(X, Y, Z * C).copy())


def channel_reduce(bev: BEVGrid, weights: np.ndarray, bias: Optional[np.ndarray] = None) -> BEVGrid:
    """
    Pointwise affine map followed by a rectifier.

    Normalization statistics are expected to be folded into `weights` and `bias`.

    Args:
        bev: BEV grid with K channels
        weights: K x C_out matrix
        bias: C_out vector (zeros when omitted)

    Returns:
        BEVGrid with C_out channels, max(0, W^T x + b) per cell
    """
    weights = np.asarray(weights)
    if weights.ndim != 2 or weights.shape[0] != bev.channels:
        raise ShapeMismatch(
            f"Reduce weights {weights.shape} do not map {bev.channels} input channels"
        )
    out_channels = weights.shape[1]
    bias = np.zeros(out_channels) if bias is None else np.asarray(bias).reshape(-1)
    if bias.shape != (out_channels,):
        raise ShapeMismatch(f"Reduce bias {bias.shape} vs {out_channels} output channels")

    affine = np.einsum(
        "xyk,ko->xyo", bev.values.astype(np.float64), weights.astype(np.float64)
    ) + bias.astype(np.float64)
    return BEVGrid(values=np.maximum(affine, 0.0).astype(bev.values.dtype))
