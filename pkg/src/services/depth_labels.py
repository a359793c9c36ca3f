"""Depth distribution labels from LiDAR point clouds and 2D boxes."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.services.discretization import DiscretizationSpec, depths_to_bins
from src.services.frustum_lift import drop_overflow_bin
from src.services.geometry import CameraCalibration, project_points, transform_points
from src.utils.constants import (
    MIN_PROJECTIVE_DEPTH,
    VELODYNE_DTYPE,
    VELODYNE_FIELDS,
    ERROR_EMPTY_DEPTH_MAP,
)
from src.utils.validators import (
    ConfigurationError,
    DataError,
    EmptyDepthMap,
    validate_divisible,
    validate_finite,
    validate_rank,
    validate_same_shape,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class PointCloud:
    """N x 4 points: x, y, z in meters plus reflectance."""

    points: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, VELODYNE_FIELDS)
        validate_finite(self.points[:, :3], "point coordinates")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def transformed(self, transform: np.ndarray) -> "PointCloud":
        """Apply a 4x4 rigid transform to the coordinates, keeping reflectance."""
        moved = np.empty_like(self.points)
        moved[:, :3] = transform_points(transform, self.xyz)
        moved[:, 3] = self.points[:, 3]
        return PointCloud(points=moved)


@dataclass
class DepthMap:
    """W x H depths in meters with a validity mask."""

    values: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        validate_rank(self.values, 2, "depth map")
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        validate_same_shape(self.values, self.valid, ("depth values", "validity"))
        if np.any(self.valid & ~(np.isfinite(self.values) & (self.values > 0))):
            raise DataError("Valid depth entries must be positive and finite")

    @property
    def is_dense(self) -> bool:
        return bool(self.valid.all())

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        valid_values = self.values[self.valid]
        return {
            "shape": tuple(self.values.shape),
            "valid": int(self.valid.sum()),
            "min": float(valid_values.min()) if valid_values.size else None,
            "max": float(valid_values.max()) if valid_values.size else None,
        }


@dataclass(frozen=True)
class Box2D:
    """Image-space box [u_min, u_max) x [v_min, v_max) with a class label."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float
    label: str = "object"

    def __post_init__(self) -> None:
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise DataError(
                f"Degenerate box {self.label}: "
                f"({self.u_min}, {self.v_min}, {self.u_max}, {self.v_max})"
            )

    def clamped(self, width: int, height: int) -> Optional["Box2D"]:
        """Clip to the image; None when nothing remains."""
        u_min, u_max = max(self.u_min, 0.0), min(self.u_max, float(width))
        v_min, v_max = max(self.v_min, 0.0), min(self.v_max, float(height))
        if u_min >= u_max or v_min >= v_max:
            return None
        return Box2D(u_min, v_min, u_max, v_max, self.label)


def read_velodyne(path: PathLike) -> PointCloud:
    """
    Read a KITTI velodyne scan: little-endian float32 (x, y, z, reflectance).

    Args:
        path: Binary scan file

    Returns:
        PointCloud
    """
    raw = np.fromfile(path, dtype=VELODYNE_DTYPE)
    if raw.size % VELODYNE_FIELDS:
        raise DataError(f"{path}: {raw.size} floats is not a multiple of {VELODYNE_FIELDS}")
    logger.info(f"Read {raw.size // VELODYNE_FIELDS} points from {path}")
    return PointCloud(points=raw.reshape(-1, VELODYNE_FIELDS).astype(np.float32))


def write_velodyne(path: PathLike, cloud: PointCloud) -> None:
    """Write a point cloud in the KITTI velodyne layout."""
    cloud.points.astype(VELODYNE_DTYPE).tofile(path)
    logger.info(f"Wrote {len(cloud)} points to {path}")


def read_boxes_csv(path: PathLike) -> List[Box2D]:
    """
    Read boxes from CSV rows ``label,u_min,v_min,u_max,v_max``.

    A header row starting with ``label`` is skipped.
    """
    boxes = []
    with open(path, newline="") as handle:
        for row_number, row in enumerate(csv.reader(handle), start=1):
            if not row or (row_number == 1 and row[0].strip().lower() == "label"):
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{row_number}: expected 5 columns, got {len(row)}")
            try:
                u_min, v_min, u_max, v_max = (float(value) for value in row[1:])
            except ValueError:
                raise DataError(f"{path}:{row_number}: non-numeric box coordinate") from None
            boxes.append(Box2D(u_min, v_min, u_max, v_max, row[0].strip()))
    return boxes


def write_boxes_csv(path: PathLike, boxes: Sequence[Box2D]) -> None:
    """Write boxes as CSV with a header row."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "u_min", "v_min", "u_max", "v_max"])
        for box in boxes:
            writer.writerow([box.label, box.u_min, box.v_min, box.u_max, box.v_max])


def project_cloud(calib: CameraCalibration, cloud: PointCloud) -> DepthMap:
    """
    Project a camera-frame cloud into a sparse W_I x H_I depth map.

    Each point writes its projective depth to the pixel containing its
    projection; collisions keep the minimum depth.

    Args:
        calib: Camera calibration
        cloud: Points in the camera frame

    Returns:
        Sparse DepthMap
    """
    width, height = calib.image_width, calib.image_height
    depth_buffer = np.full(width * height, np.inf)

    uv, depth = project_points(calib, cloud.xyz)
    in_front = depth > MIN_PROJECTIVE_DEPTH
    with np.errstate(invalid="ignore"):
        u = np.floor(uv[:, 0])
        v = np.floor(uv[:, 1])
        keep = in_front & (u >= 0) & (u < width) & (v >= 0) & (v < height)

    flat_index = u[keep].astype(np.int64) * height + v[keep].astype(np.int64)
    np.minimum.at(depth_buffer, flat_index, depth[keep])

    dropped = len(cloud) - int(keep.sum())
    if dropped:
        logger.debug(f"Dropped {dropped} points behind the camera or outside the image")

    values = depth_buffer.reshape(width, height)
    valid = np.isfinite(values)
    return DepthMap(values=np.where(valid, values, 0.0), valid=valid)


def complete_depth(sparse: DepthMap, max_passes: Optional[int] = None) -> DepthMap:
    """
    Fill invalid pixels by repeated 3x3 minimum dilation of valid depths.

    Valid input pixels are never changed; each pass fills every invalid
    pixel that has at least one valid 8-neighbor with their minimum.

    Args:
        sparse: Depth map with at least one valid pixel
        max_passes: Optional cap on the number of passes

    Returns:
        Dense DepthMap

    Raises:
        EmptyDepthMap: If no pixel is valid
    """
    if not sparse.valid.any():
        raise EmptyDepthMap(ERROR_EMPTY_DEPTH_MAP)

    values = np.where(sparse.valid, sparse.values, np.inf)
    passes = 0
    while not np.isfinite(values).all():
        padded = np.pad(values, 1, constant_values=np.inf)
        neighborhood_min = sliding_window_view(padded, (3, 3)).min(axis=(-2, -1))
        values = np.where(np.isfinite(values), values, neighborhood_min)
        passes += 1
        if max_passes is not None and passes >= max_passes:
            break

    logger.debug(f"Depth completion finished after {passes} passes")
    valid = np.isfinite(values)
    return DepthMap(values=np.where(valid, values, 0.0), valid=valid)


def downsample_depth(dense: DepthMap, factor: int) -> DepthMap:
    """
    Block-minimum downsampling of a depth map.

    Args:
        dense: W x H depth map
        factor: Block edge length

    Returns:
        (W / factor) x (H / factor) DepthMap

    Raises:
        IndivisibleDimensions: If W or H is not divisible by factor
    """
    width, height = dense.values.shape
    validate_divisible((width, height), factor)
    blocks = np.where(dense.valid, dense.values, np.inf).reshape(
        width // factor, factor, height // factor, factor
    )
    values = blocks.min(axis=(1, 3))
    valid = np.isfinite(values)
    return DepthMap(values=np.where(valid, values, 0.0), valid=valid)


def one_hot_labels(depth: DepthMap, disc: DiscretizationSpec) -> np.ndarray:
    """
    One-hot depth labels W_F x H_F x (D + 1).

    Out-of-range depths land in the overflow bin.

    Args:
        depth: Dense feature-resolution depth map
        disc: Discretization spec with an overflow bin

    Returns:
        float32 label tensor
    """
    if not disc.overflow_bin:
        raise ConfigurationError("Depth labels require a discretization with an overflow bin")
    if not depth.is_dense:
        raise DataError("Depth labels require a dense depth map")
    bins = depths_to_bins(disc, depth.values)
    return (np.arange(disc.total_bins) == bins[..., None]).astype(np.float32)


def depth_map_distribution(depth: DepthMap, disc: DiscretizationSpec) -> np.ndarray:
    """
    One-hot distributions W_F x H_F x D from an externally estimated depth map.

    Pixels whose depth falls outside the range get an all-zero row.
    """
    labels = one_hot_labels(depth, disc.model_copy(update={"overflow_bin": True}))
    return drop_overflow_bin(labels, disc.num_bins)


def foreground_mask(
    boxes: Sequence[Box2D],
    image_width: int,
    image_height: int,
    downsample: int
) -> np.ndarray:
    """
    Feature pixels whose image-space block center lies inside any box.

    Args:
        boxes: Image-space boxes (clamped to the image)
        image_width: W_I
        image_height: H_I
        downsample: Ratio W_I / W_F

    Returns:
        W_F x H_F boolean mask
    """
    validate_divisible((image_width, image_height), downsample)
    width, height = image_width // downsample, image_height // downsample
    centers_u = (np.arange(width) + 0.5) * downsample
    centers_v = (np.arange(height) + 0.5) * downsample

    mask = np.zeros((width, height), dtype=bool)
    for box in boxes:
        clamped = box.clamped(image_width, image_height)
        if clamped is None:
            logger.warning(f"Box {box.label} lies outside the image; ignored")
            continue
        inside_u = (centers_u >= clamped.u_min) & (centers_u < clamped.u_max)
        inside_v = (centers_v >= clamped.v_min) & (centers_v < clamped.v_max)
        mask |= inside_u[:, None] & inside_v[None, :]
    return mask


def generate_labels(
    calib: CameraCalibration,
    cloud: PointCloud,
    disc: DiscretizationSpec
) -> np.ndarray:
    """
    Full label pipeline: project, complete, downsample, one-hot encode.

    Args:
        calib: Camera calibration
        cloud: Camera-frame point cloud
        disc: Discretization spec with an overflow bin

    Returns:
        W_F x H_F x (D + 1) one-hot labels
    """
    sparse = project_cloud(calib, cloud)
    logger.info(f"Projected cloud: {int(sparse.valid.sum())} valid pixels")
    dense = complete_depth(sparse)
    feature_depth = downsample_depth(dense, calib.feature_downsample)
    return one_hot_labels(feature_depth, disc)
