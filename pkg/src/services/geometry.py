"""Camera calibration, projection and voxel grid geometry."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.utils.constants import (
    DEFAULT_CALIB_KEY,
    DEFAULT_VOXEL_SIZE,
    GRID_RANGE_TOLERANCE,
    KITTI_RANGES,
    MIN_PROJECTIVE_DEPTH,
    WAYMO_RANGES,
    ERROR_NON_POSITIVE_DEPTH,
)
from src.utils.validators import (
    ConfigurationError,
    NonPositiveDepth,
    validate_matrix,
)

logger = logging.getLogger(__name__)


def sensor_to_camera_axes() -> np.ndarray:
    """
    Axis permutation from a sensor frame (x forward, y left, z up) to a
    camera frame (x right, y down, z forward).

    Returns:
        4x4 homogeneous transform
    """
    return np.array(
        [
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


@dataclass(frozen=True)
class CameraCalibration:
    """
    Projection matrix plus image/feature geometry of a single camera.

    `extrinsic` maps grid (sensor-frame) points into the camera frame before
    `P` is applied; it is the identity when the grid is already expressed in
    camera coordinates.
    """

    P: np.ndarray
    image_width: int
    image_height: int
    feature_downsample: int = 1
    extrinsic: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self) -> None:
        object.__setattr__(self, "P", validate_matrix(self.P, (3, 4), "P"))
        object.__setattr__(
            self, "extrinsic", validate_matrix(self.extrinsic, (4, 4), "extrinsic")
        )
        if self.P[2, 2] == 0.0:
            raise ConfigurationError("P[2,2] must be nonzero")
        if self.feature_downsample < 1:
            raise ConfigurationError(
                f"feature_downsample must be >= 1, got {self.feature_downsample}"
            )
        if self.image_width < 1 or self.image_height < 1:
            raise ConfigurationError("Image dimensions must be positive")
        if self.image_width % self.feature_downsample or self.image_height % self.feature_downsample:
            raise ConfigurationError(
                f"Image {self.image_width}x{self.image_height} is not divisible "
                f"by feature_downsample {self.feature_downsample}"
            )

    @property
    def feature_width(self) -> int:
        """Feature map width W_F."""
        return self.image_width // self.feature_downsample

    @property
    def feature_height(self) -> int:
        """Feature map height H_F."""
        return self.image_height // self.feature_downsample

    def with_extrinsic(self, extrinsic: np.ndarray) -> "CameraCalibration":
        """Return a copy with a different sensor-to-camera transform."""
        return CameraCalibration(
            P=self.P,
            image_width=self.image_width,
            image_height=self.image_height,
            feature_downsample=self.feature_downsample,
            extrinsic=extrinsic,
        )

    def fingerprint(self) -> bytes:
        """Bytes identifying this calibration, used for cache keys."""
        header = np.array(
            [self.image_width, self.image_height, self.feature_downsample], dtype=np.int64
        )
        return header.tobytes() + self.P.tobytes() + self.extrinsic.tobytes()

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "P": self.P.tolist(),
            "image_width": self.image_width,
            "image_height": self.image_height,
            "feature_downsample": self.feature_downsample,
            "extrinsic": self.extrinsic.tolist(),
        }


class GridSpec(BaseModel):
    """Metric voxel grid: per-axis [min, max] ranges and voxel sizes."""

    model_config = ConfigDict(frozen=True)

    x_range: Tuple[float, float] = KITTI_RANGES[0]
    y_range: Tuple[float, float] = KITTI_RANGES[1]
    z_range: Tuple[float, float] = KITTI_RANGES[2]
    voxel_size: Tuple[float, float, float] = Field(default=DEFAULT_VOXEL_SIZE)

    @model_validator(mode="after")
    def _check_geometry(self) -> "GridSpec":
        for axis, (low, high), size in zip("xyz", self.ranges, self.voxel_size):
            if not np.isfinite([low, high, size]).all():
                raise ConfigurationError(f"{axis} range and voxel size must be finite")
            if high <= low:
                raise ConfigurationError(f"{axis} range must be nonempty, got [{low}, {high}]")
            if size <= 0:
                raise ConfigurationError(f"{axis} voxel size must be positive, got {size}")
            count = round((high - low) / size)
            if count < 1:
                raise ConfigurationError(f"{axis} axis holds no voxel")
            if abs(low + count * size - high) > GRID_RANGE_TOLERANCE:
                raise ConfigurationError(
                    f"{axis} range [{low}, {high}] is not a multiple of voxel size {size}"
                )
        return self

    @classmethod
    def kitti(cls, voxel_size: Tuple[float, float, float] = DEFAULT_VOXEL_SIZE) -> "GridSpec":
        """KITTI grid: [2, 46.8] x [-30.08, 30.08] x [-3, 1] m."""
        return cls(
            x_range=KITTI_RANGES[0],
            y_range=KITTI_RANGES[1],
            z_range=KITTI_RANGES[2],
            voxel_size=voxel_size,
        )

    @classmethod
    def waymo(cls, voxel_size: Tuple[float, float, float] = DEFAULT_VOXEL_SIZE) -> "GridSpec":
        """Waymo front-camera grid: [2, 55.76] x [-25.6, 25.6] x [-4, 4] m."""
        return cls(
            x_range=WAYMO_RANGES[0],
            y_range=WAYMO_RANGES[1],
            z_range=WAYMO_RANGES[2],
            voxel_size=voxel_size,
        )

    @property
    def ranges(self) -> Tuple[Tuple[float, float], ...]:
        return (self.x_range, self.y_range, self.z_range)

    @property
    def dims(self) -> Tuple[int, int, int]:
        """Voxel counts (X, Y, Z)."""
        return tuple(  # type: ignore[return-value]
            int(round((high - low) / size))
            for (low, high), size in zip(self.ranges, self.voxel_size)
        )

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """BEV cell (i, j) containing the metric point (x, y)."""
        i = int(np.floor((x - self.x_range[0]) / self.voxel_size[0]))
        j = int(np.floor((y - self.y_range[0]) / self.voxel_size[1]))
        return i, j

    def contains(self, point: np.ndarray) -> bool:
        """Whether a 3D point lies inside the grid volume."""
        return all(low <= value <= high for value, (low, high) in zip(point, self.ranges))


def project_point(calib: CameraCalibration, p: np.ndarray) -> Tuple[float, float, float]:
    """
    Project a camera-frame 3D point to image coordinates.

    Args:
        calib: Camera calibration
        p: 3-vector in meters

    Returns:
        (u, v, d_c): pixel coordinates and projective depth

    Raises:
        NonPositiveDepth: If the point lies behind or on the camera plane
    """
    homogeneous = calib.P @ np.append(np.asarray(p, dtype=np.float64), 1.0)
    depth = float(homogeneous[2])
    if not depth > MIN_PROJECTIVE_DEPTH:
        raise NonPositiveDepth(ERROR_NON_POSITIVE_DEPTH.format(depth=depth))
    return float(homogeneous[0] / depth), float(homogeneous[1] / depth), depth


def project_points(calib: CameraCalibration, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized projection of camera-frame points.

    Points with depth <= MIN_PROJECTIVE_DEPTH get NaN pixel coordinates
    instead of raising.

    Args:
        calib: Camera calibration
        points: (N, 3) array in meters

    Returns:
        (uv, depth): (N, 2) pixel coordinates and (N,) projective depths, float64
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    homogeneous = points @ calib.P[:, :3].T + calib.P[:, 3]
    depth = homogeneous[:, 2]
    in_front = depth > MIN_PROJECTIVE_DEPTH
    safe = np.where(in_front, depth, 1.0)
    uv = homogeneous[:, :2] / safe[:, None]
    uv[~in_front] = np.nan
    return uv, depth


def transform_points(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a 4x4 rigid transform to (N, 3) points, returning float64."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ transform[:3, :3].T + transform[:3, 3]


def image_to_feature_coords(
    u: Union[float, np.ndarray],
    v: Union[float, np.ndarray],
    downsample: float
) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
    """Scale image pixel coordinates to feature-map coordinates (no rounding)."""
    if downsample < 1:
        raise ConfigurationError(f"downsample must be >= 1, got {downsample}")
    return u / downsample, v / downsample


def voxel_centers(grid: GridSpec) -> np.ndarray:
    """
    Metric centers of every voxel.

    Args:
        grid: Grid specification

    Returns:
        float32 array of shape (X, Y, Z, 3)
    """
    axes = [
        low + (np.arange(count, dtype=np.float64) + 0.5) * size
        for (low, _), size, count in zip(grid.ranges, grid.voxel_size, grid.dims)
    ]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    return np.stack([xs, ys, zs], axis=-1).astype(np.float32)


def parse_kitti_calibration(text: str) -> Dict[str, np.ndarray]:
    """
    Parse KITTI calibration text into flat float64 arrays keyed by name.

    Lines look like ``P2: f f f ... f``; blank lines are skipped and
    keys may carry or omit the trailing colon.

    Args:
        text: Calibration file contents

    Returns:
        Mapping of key to 1D value array
    """
    entries: Dict[str, np.ndarray] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(":") if ":" in line else line.partition(" ")
        try:
            values = np.array([float(token) for token in rest.split()], dtype=np.float64)
        except ValueError:
            raise ConfigurationError(
                f"Calibration line {line_number} ({key.strip()}) holds non-numeric values"
            ) from None
        entries[key.strip()] = values
    return entries


def _homogeneous(values: np.ndarray, name: str) -> np.ndarray:
    """Expand a 3x3 (9 values) or 3x4 (12 values) entry to a 4x4 transform."""
    transform = np.eye(4)
    if values.size == 9:
        transform[:3, :3] = values.reshape(3, 3)
    elif values.size == 12:
        transform[:3, :] = values.reshape(3, 4)
    else:
        raise ConfigurationError(f"{name} must hold 9 or 12 values, got {values.size}")
    return transform


def load_kitti_calibration(
    path: Union[str, Path],
    image_width: int,
    image_height: int,
    feature_downsample: int = 1,
    key: str = DEFAULT_CALIB_KEY,
    sensor_frame: bool = False
) -> CameraCalibration:
    """
    Build a calibration from a KITTI calibration file.

    Args:
        path: Calibration text file
        image_width: Image width W_I
        image_height: Image height H_I
        feature_downsample: Ratio W_I / W_F
        key: Projection matrix key
        sensor_frame: Compose R0_rect and Tr_velo_to_cam into the extrinsic

    Returns:
        CameraCalibration
    """
    entries = parse_kitti_calibration(Path(path).read_text())
    if key not in entries:
        raise ConfigurationError(f"Calibration key {key!r} not found in {path}")
    values = entries[key]
    if values.size != 12:
        raise ConfigurationError(f"{key} must hold 12 values, got {values.size}")

    extrinsic = np.eye(4)
    if sensor_frame:
        if "Tr_velo_to_cam" in entries:
            extrinsic = _homogeneous(entries["Tr_velo_to_cam"], "Tr_velo_to_cam")
            if "R0_rect" in entries:
                extrinsic = _homogeneous(entries["R0_rect"], "R0_rect") @ extrinsic
        else:
            logger.warning(f"No Tr_velo_to_cam in {path}; using sensor axis permutation")
            extrinsic = sensor_to_camera_axes()

    logger.info(f"Loaded calibration {key} from {path}")
    return CameraCalibration(
        P=values.reshape(3, 4),
        image_width=image_width,
        image_height=image_height,
        feature_downsample=feature_downsample,
        extrinsic=extrinsic,
    )


def format_kitti_calibration(
    matrices: Dict[str, np.ndarray],
    precision: int = 12
) -> str:
    """Render matrices as KITTI calibration text, one ``key: values`` line each."""
    lines = []
    for key, matrix in matrices.items():
        values = " ".join(f"{value:.{precision}e}" for value in np.ravel(matrix))
        lines.append(f"{key}: {values}")
    return "\n".join(lines) + "\n"


def load_rigid_transform(path: Union[str, Path]) -> np.ndarray:
    """Read a row-major 4x4 transform from whitespace-separated text."""
    tokens = Path(path).read_text().split()
    try:
        values = np.array([float(token) for token in tokens], dtype=np.float64)
    except ValueError:
        raise ConfigurationError(f"Transform file {path} holds non-numeric values") from None
    if values.size != 16:
        raise ConfigurationError(f"Transform file {path} must hold 16 values, got {values.size}")
    return validate_matrix(values.reshape(4, 4), (4, 4), "rigid transform")


def canonical_calibration(
    focal: float,
    image_width: int,
    image_height: int,
    feature_downsample: int = 1,
    extrinsic: Optional[np.ndarray] = None
) -> CameraCalibration:
    """Pinhole calibration with the principal point at the image center."""
    P = np.array(
        [
            [focal, 0.0, image_width / 2.0, 0.0],
            [0.0, focal, image_height / 2.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    return CameraCalibration(
        P=P,
        image_width=image_width,
        image_height=image_height,
        feature_downsample=feature_downsample,
        extrinsic=np.eye(4) if extrinsic is None else extrinsic,
    )
