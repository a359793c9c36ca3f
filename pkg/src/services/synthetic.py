"""Synthetic box scenes rendered into features, logits, depth maps and point clouds."""

from dataclasses import dataclass, field
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from src.services.depth_labels import DepthMap, PointCloud
from src.services.discretization import DiscretizationSpec, depths_to_bins
from src.services.geometry import CameraCalibration, GridSpec
from src.utils.constants import (
    MIN_PROJECTIVE_DEPTH,
    MIN_SHARPNESS_SIGMA,
    ERROR_DEGENERATE_SCENE,
)
from src.utils.validators import ConfigurationError, DegenerateScene

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticBox:
    """Axis-aligned box in the grid frame with a constant feature signature."""

    center: Tuple[float, float, float]
    extents: Tuple[float, float, float]
    signature: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.center) != 3 or len(self.extents) != 3:
            raise ConfigurationError("Box center and extents need three components")
        if min(self.extents) <= 0:
            raise ConfigurationError(f"Box extents must be positive, got {self.extents}")
        if not self.signature:
            raise ConfigurationError("Box signature must hold at least one channel")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.extents) / 2.0

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.extents) / 2.0

    def corners(self) -> np.ndarray:
        """The 8 corners as an 8 x 3 array."""
        return np.array(list(product(*zip(self.lower, self.upper))))


@dataclass
class SyntheticScene:
    """
    Boxes seen by one camera, plus a backdrop and a distribution sharpness.

    Pixels that miss every box see the backdrop at `background_depth` with
    zero features. `sigma` controls how peaked the generated logits are.
    """

    boxes: List[SyntheticBox]
    calib: CameraCalibration
    grid: GridSpec
    sigma: float = 0.0
    background_depth: Optional[float] = None

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.background_depth is not None and self.background_depth <= 0:
            raise ConfigurationError("background_depth must be positive")
        channels = {len(box.signature) for box in self.boxes}
        if len(channels) > 1:
            raise ConfigurationError(f"Box signatures disagree on channel count: {channels}")
        for box in self.boxes:
            if not all(self.grid.contains(corner) for corner in box.corners()):
                raise ConfigurationError(f"Box at {box.center} leaves the grid range")

    @property
    def channels(self) -> int:
        return len(self.boxes[0].signature) if self.boxes else 0


@dataclass
class SyntheticResult:
    """Everything rendered from a synthetic scene."""

    features: np.ndarray  # W_F x H_F x C
    logits: np.ndarray  # W_F x H_F x (D + 1)
    depth: DepthMap  # W_I x H_I, rendered at pixel centers
    feature_depth: DepthMap  # W_F x H_F, rendered along the sampled rays
    fg_mask: np.ndarray  # W_F x H_F
    cloud: PointCloud  # camera frame
    visible_boxes: int = 0
    box_ids: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "features_shape": tuple(self.features.shape),
            "logits_shape": tuple(self.logits.shape),
            "foreground_pixels": int(self.fg_mask.sum()),
            "cloud_points": len(self.cloud),
            "visible_boxes": self.visible_boxes,
            "depth": self.depth.to_dict(),
        }


def _ray_parameters(calib: CameraCalibration, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rays through pixels as grid-frame lines X(z) = z * a + b.

    z is the projective depth, so P E X(z) = z (u, v, 1).

    Returns:
        (a, b): N x 3 direction and offset per pixel
    """
    M_inv = np.linalg.inv(calib.P[:, :3])
    pixels = np.stack([u, v, np.ones_like(u)], axis=-1).astype(np.float64)
    camera_dirs = pixels @ M_inv.T
    camera_offset = -(M_inv @ calib.P[:, 3])

    E_inv = np.linalg.inv(calib.extrinsic)
    dirs = camera_dirs @ E_inv[:3, :3].T
    offset = E_inv[:3, :3] @ camera_offset + E_inv[:3, 3]
    return dirs, np.broadcast_to(offset, dirs.shape)


def _camera_points(calib: CameraCalibration, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Camera-frame points at projective depth `depth` behind pixels (u, v)."""
    M_inv = np.linalg.inv(calib.P[:, :3])
    pixels = np.stack([u, v, np.ones_like(u)], axis=-1) * depth[:, None]
    return (pixels - calib.P[:, 3]) @ M_inv.T


def _box_hits(dirs: np.ndarray, offsets: np.ndarray, box: SyntheticBox) -> np.ndarray:
    """Entry depth of every ray into a box (inf where the ray misses)."""
    lower, upper = box.lower, box.upper
    near = np.full(dirs.shape[0], -np.inf)
    far = np.full(dirs.shape[0], np.inf)
    for axis in range(3):
        a = dirs[:, axis]
        b = offsets[:, axis]
        parallel = a == 0
        safe = np.where(parallel, 1.0, a)
        t0 = (lower[axis] - b) / safe
        t1 = (upper[axis] - b) / safe
        inside = (b >= lower[axis]) & (b <= upper[axis])
        near = np.where(parallel, np.where(inside, near, np.inf), np.maximum(near, np.minimum(t0, t1)))
        far = np.where(parallel, np.where(inside, far, -np.inf), np.minimum(far, np.maximum(t0, t1)))
    hit = (near <= far) & (far > MIN_PROJECTIVE_DEPTH)
    return np.where(hit, np.maximum(near, MIN_PROJECTIVE_DEPTH), np.inf)


def render_depth(
    calib: CameraCalibration,
    boxes: Sequence[SyntheticBox],
    u: np.ndarray,
    v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest box depth along the rays through (u, v).

    Returns:
        (depth, box_id): projective depth (inf on a miss) and the index of
        the visible box (-1 on a miss)
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    dirs, offsets = _ray_parameters(calib, u, v)
    depth = np.full(u.shape, np.inf)
    box_id = np.full(u.shape, -1, dtype=np.int64)
    for index, box in enumerate(boxes):
        hit_depth = _box_hits(dirs, offsets, box)
        closer = hit_depth < depth
        depth = np.where(closer, hit_depth, depth)
        box_id = np.where(closer, index, box_id)
    return depth, box_id


def synth_scene(
    scene: SyntheticScene,
    disc: DiscretizationSpec,
    calib: Optional[CameraCalibration] = None,
    cloud_stride: int = 1
) -> SyntheticResult:
    """
    Render a synthetic scene.

    Feature pixel (i, j) is rendered along the ray through image pixel
    (i * ds, j * ds), which is where the frustum transform samples it. The
    image-resolution depth map and the point cloud use pixel centers.

    Args:
        scene: Scene definition
        disc: Discretization spec with an overflow bin
        calib: Camera override (default: the scene's camera)
        cloud_stride: Pixel lattice step of the generated point cloud

    Returns:
        SyntheticResult

    Raises:
        DegenerateScene: If no box is visible in the feature map
    """
    calib = calib or scene.calib
    if not disc.overflow_bin:
        raise ConfigurationError("Synthetic logits require a discretization with an overflow bin")
    if cloud_stride < 1:
        raise ConfigurationError(f"cloud_stride must be >= 1, got {cloud_stride}")
    if not scene.boxes:
        raise DegenerateScene(ERROR_DEGENERATE_SCENE)

    background = scene.background_depth or 2.0 * disc.d_max
    W_F, H_F, ds = calib.feature_width, calib.feature_height, calib.feature_downsample
    W_I, H_I = calib.image_width, calib.image_height

    fu, fv = np.meshgrid(np.arange(W_F) * ds, np.arange(H_F) * ds, indexing="ij")
    feature_depth, box_id = render_depth(calib, scene.boxes, fu, fv)
    box_id = box_id.reshape(W_F, H_F)
    fg_mask = box_id >= 0
    if not fg_mask.any():
        raise DegenerateScene(ERROR_DEGENERATE_SCENE)
    feature_depth = np.where(fg_mask.reshape(-1), feature_depth, background).reshape(W_F, H_F)

    signatures = np.array([box.signature for box in scene.boxes], dtype=np.float32)
    features = np.where(fg_mask[..., None], signatures[np.maximum(box_id, 0)], 0.0).astype(np.float32)

    bins = depths_to_bins(disc, feature_depth)
    sharpness = 1.0 / max(scene.sigma, MIN_SHARPNESS_SIGMA)
    logits = ((np.arange(disc.total_bins) == bins[..., None]) * sharpness).astype(np.float32)

    iu, iv = np.meshgrid(np.arange(W_I) + 0.5, np.arange(H_I) + 0.5, indexing="ij")
    image_depth, _ = render_depth(calib, scene.boxes, iu, iv)
    image_depth = np.where(np.isfinite(image_depth), image_depth, background).reshape(W_I, H_I)

    lattice_u = iu[::cloud_stride, ::cloud_stride].reshape(-1)
    lattice_v = iv[::cloud_stride, ::cloud_stride].reshape(-1)
    lattice_depth = image_depth[::cloud_stride, ::cloud_stride].reshape(-1)
    xyz = _camera_points(calib, lattice_u, lattice_v, lattice_depth)
    cloud = PointCloud(points=np.column_stack([xyz, np.ones(xyz.shape[0])]))

    visible = int(np.unique(box_id[fg_mask]).size)
    logger.info(
        f"Rendered scene: {visible}/{len(scene.boxes)} boxes visible, "
        f"{int(fg_mask.sum())} foreground pixels, {len(cloud)} cloud points"
    )
    return SyntheticResult(
        features=features,
        logits=logits,
        depth=DepthMap(values=image_depth),
        feature_depth=DepthMap(values=feature_depth),
        fg_mask=fg_mask,
        cloud=cloud,
        visible_boxes=visible,
        box_ids=box_id,
    )


def random_scene(
    rng: np.random.Generator,
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    grid: GridSpec,
    channels: int = 8,
    sigma: float = 0.0,
    extents: Tuple[float, float, float] = (0.4, 0.6, 1.0),
    bin_range: Optional[Tuple[int, int]] = None,
    max_attempts: int = 100
) -> SyntheticScene:
    """
    A single-box scene whose center sits at the center depth of a random bin.

    The box is placed on the ray through a random pixel of the central image
    region, with its center at the projective depth of the chosen bin center.

    Args:
        rng: Random generator
        calib: Camera calibration
        disc: Discretization spec
        grid: Grid the box must fit in
        channels: Feature channels C
        sigma: Distribution sharpness parameter
        extents: Box size along the grid axes
        bin_range: Inclusive range of candidate bins (default 3 .. D // 2)
        max_attempts: Placement retries before giving up

    Returns:
        SyntheticScene

    Raises:
        DegenerateScene: If no placement fits inside the grid
    """
    if bin_range is None:
        low = min(3, disc.num_bins - 1)
        bin_range = (low, max(low, disc.num_bins // 2))
    low, high = bin_range
    centers = disc.centers
    W_I, H_I = calib.image_width, calib.image_height

    for _ in range(max_attempts):
        k = int(rng.integers(low, high + 1))
        u = rng.uniform(W_I / 3.0, 2.0 * W_I / 3.0)
        v = rng.uniform(0.4 * H_I, 0.6 * H_I)
        dirs, offsets = _ray_parameters(calib, np.array([u]), np.array([v]))
        center = centers[k] * dirs[0] + offsets[0]
        box = SyntheticBox(
            center=tuple(float(c) for c in center),
            extents=tuple(float(e) for e in extents),
            signature=tuple(float(s) for s in rng.uniform(0.5, 1.5, size=channels)),
        )
        if all(grid.contains(corner) for corner in box.corners()):
            logger.debug(f"Placed box at {box.center} (bin {k})")
            return SyntheticScene(boxes=[box], calib=calib, grid=grid, sigma=sigma)

    raise DegenerateScene(f"Could not place a box inside the grid in {max_attempts} attempts")
