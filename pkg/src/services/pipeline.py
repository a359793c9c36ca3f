"""End-to-end image-to-BEV composition: softmax, lift, voxelize, collapse, reduce."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union
import logging

import numpy as np

from src.services.discretization import DiscretizationSpec
from src.services.frustum_lift import (
    argmax_one_hot,
    drop_overflow_bin,
    lift_with_mode,
    softmax_normalize,
)
from src.services.geometry import CameraCalibration, GridSpec
from src.services.grid_transform import (
    BEVGrid,
    VoxelGrid,
    channel_reduce,
    collapse_to_bev,
    frustum_to_voxel,
)
from src.utils.cache import SamplingCache
from src.utils.constants import LiftMode, SamplingMode
from src.utils.tensor_io import write_tensor
from src.utils.validators import (
    ShapeMismatch,
    validate_bin_count,
    validate_leading_dims,
    validate_rank,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    """Final BEV features plus every intermediate stage."""

    bev: BEVGrid
    collapsed: BEVGrid
    voxels: VoxelGrid
    frustum: np.ndarray
    distribution: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "distribution_shape": tuple(self.distribution.shape),
            "frustum_shape": tuple(self.frustum.shape),
            "voxels": self.voxels.to_dict(),
            "collapsed_shape": tuple(self.collapsed.values.shape),
            "bev_shape": tuple(self.bev.values.shape),
        }

    def dump(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """
        Write the frustum, voxel, collapsed and final BEV tensors.

        Returns:
            Mapping of stage name to written path
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stages = {
            "frustum": self.frustum,
            "voxels": self.voxels.values,
            "collapsed": self.collapsed.values,
            "bev": self.bev.values,
        }
        written = {}
        for name, values in stages.items():
            path = directory / f"{name}.tensor"
            write_tensor(path, values)
            written[name] = path
        logger.info(f"Dumped {len(written)} pipeline stages to {directory}")
        return written


def run_pipeline(
    features: np.ndarray,
    logits: np.ndarray,
    calib: CameraCalibration,
    disc: DiscretizationSpec,
    grid: GridSpec,
    weights: np.ndarray,
    bias: Optional[np.ndarray] = None,
    lift_mode: LiftMode = LiftMode.DISTRIBUTION,
    sampling_mode: SamplingMode = SamplingMode.TRILINEAR,
    workers: Optional[int] = None,
    cache: Optional[SamplingCache] = None,
    dump_dir: Optional[Union[str, Path]] = None
) -> PipelineResult:
    """
    Transform image features into BEV features.

    softmax -> drop overflow bin -> lift -> frustum_to_voxel ->
    collapse_to_bev -> channel_reduce. In ARGMAX mode the most probable bin
    is chosen before the overflow bin is dropped, so pixels whose mode is the
    overflow bin contribute nothing.

    Args:
        features: W_F x H_F x C image features
        logits: W_F x H_F x K depth logits (K = D + 1 with an overflow bin)
        calib: Camera calibration
        disc: Discretization spec
        grid: Voxel grid spec
        weights: (Z * C) x C_out reduce weights
        bias: Optional C_out reduce bias
        lift_mode: Lift variant
        sampling_mode: Frustum sampling kernel
        workers: Worker threads for sampling
        cache: Sampling-coordinate cache
        dump_dir: When given, intermediate tensors are written there

    Returns:
        PipelineResult
    """
    validate_rank(features, 3, "features")
    validate_rank(logits, 3, "logits")
    validate_leading_dims(features, logits, 2, ("features", "logits"))
    expected = (calib.feature_width, calib.feature_height)
    if features.shape[:2] != expected:
        raise ShapeMismatch(f"Features {features.shape[:2]} vs calibration feature map {expected}")
    validate_bin_count(logits, disc.total_bins)

    dist = softmax_normalize(logits)
    lift_mode = LiftMode(lift_mode)
    if lift_mode == LiftMode.ARGMAX:
        dist = argmax_one_hot(dist)
        lift_mode = LiftMode.DISTRIBUTION
    in_range = drop_overflow_bin(dist, disc.num_bins) if disc.overflow_bin else dist
    logger.debug(f"Depth distribution {dist.shape}")

    frustum = lift_with_mode(in_range, features, lift_mode)
    voxels = frustum_to_voxel(
        frustum, calib, disc, grid, mode=sampling_mode, workers=workers, cache=cache
    )
    collapsed = collapse_to_bev(voxels)
    bev = channel_reduce(collapsed, weights, bias)
    logger.info(f"Pipeline: features {features.shape} -> BEV {bev.values.shape}")

    result = PipelineResult(
        bev=bev,
        collapsed=collapsed,
        voxels=voxels,
        frustum=frustum,
        distribution=dist,
    )
    if dump_dir is not None:
        result.dump(dump_dir)
    return result


def uniform_reduce_weights(in_channels: int, out_channels: int = 1) -> np.ndarray:
    """Reduce weights that average every input channel into each output."""
    if in_channels < 1 or out_channels < 1:
        raise ShapeMismatch("Channel counts must be positive")
    return np.full((in_channels, out_channels), 1.0 / in_channels, dtype=np.float32)
