"""Toolkit constants, enums and grid presets."""

from enum import Enum
from typing import Dict, List, Tuple


class DiscretizationMode(str, Enum):
    """Depth discretization schemes."""
    UD = "UD"
    SID = "SID"
    LID = "LID"


class LiftMode(str, Enum):
    """How image features populate the frustum depth axis."""
    DISTRIBUTION = "distribution"  # outer product with the depth distribution
    REPEAT = "repeat"  # features copied to every depth bin
    ARGMAX = "argmax"  # one-hot at the most probable bin


class SamplingMode(str, Enum):
    """Frustum sampling kernels for the frustum-to-voxel transform."""
    TRILINEAR = "trilinear"
    NEAREST = "nearest"


class PixelGroup(str, Enum):
    """Foreground/background split used by the depth loss and entropy report."""
    FOREGROUND = "foreground"
    BACKGROUND = "background"


# Grid presets: ((x_min, x_max), (y_min, y_max), (z_min, z_max)) in meters
KITTI_RANGES: Tuple[Tuple[float, float], ...] = ((2.0, 46.8), (-30.08, 30.08), (-3.0, 1.0))
WAYMO_RANGES: Tuple[Tuple[float, float], ...] = ((2.0, 55.76), (-25.6, 25.6), (-4.0, 4.0))
DEFAULT_VOXEL_SIZE: Tuple[float, float, float] = (0.16, 0.16, 0.16)

GRID_PRESETS: Dict[str, Tuple[Tuple[float, float], ...]] = {
    "kitti": KITTI_RANGES,
    "waymo": WAYMO_RANGES,
}

# Depth discretization defaults
DEFAULT_D_MIN = 2.0
DEFAULT_D_MAX = 46.8
DEFAULT_NUM_BINS = 80

# Geometry tolerances
MIN_PROJECTIVE_DEPTH = 1e-6  # points at or behind this depth do not project
GRID_RANGE_TOLERANCE = 1e-6  # meters; X * vx must reconstruct the range

# Loss defaults
DEFAULT_ALPHA_FG = 3.25
DEFAULT_ALPHA_BG = 0.25
DEFAULT_GAMMA = 2.0
DEFAULT_LAMBDA_DEPTH = 3.0
DEFAULT_LAMBDA_CLS = 1.0
DEFAULT_LAMBDA_REG = 2.0
DEFAULT_LAMBDA_DIR = 0.2
PROBABILITY_EPS = 1e-9  # clamp before log

# Diagnostics
NORMALIZATION_TOLERANCE = 1e-3
CI95_Z = 1.96
GRADCHECK_STEP_FLOOR = 1e-2  # steps never shrink below eps * this magnitude
GRADCHECK_DENOMINATOR_FLOOR = 1e-8
ENTROPY_CSV_HEADER: List[str] = [
    "gt_bin", "group", "count", "mean_entropy", "ci_low", "ci_high",
]
DISCRETIZE_CSV_HEADER: List[str] = ["index", "edge", "center", "width"]

# Synthetic scenes
MIN_SHARPNESS_SIGMA = 1e-3

# Tensor file format
TENSOR_MAGIC = b"CDTN"
TENSOR_VERSION = 1
TENSOR_DTYPES: Dict[int, str] = {0: "<f4", 1: "<f8"}

# KITTI files
DEFAULT_CALIB_KEY = "P2"
VELODYNE_DTYPE = "<f4"
VELODYNE_FIELDS = 4

# Exit codes
EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4

# Error messages
ERROR_SHAPE_MISMATCH = "Shape mismatch: {detail}"
ERROR_NON_FINITE = "Non-finite values in {name}"
ERROR_WRONG_BIN_COUNT = "Expected {expected} depth bins, got {actual}"
ERROR_OUT_OF_RANGE = "Depth {depth} outside [{d_min}, {d_max}]"
ERROR_INDEX_OUT_OF_RANGE = "Bin edge index {index} outside [0, {num_bins}]"
ERROR_NON_POSITIVE_DEPTH = "Point projects to non-positive depth {depth}"
ERROR_EMPTY_DEPTH_MAP = "Depth map has no valid pixel to complete from"
ERROR_INDIVISIBLE = "Extent {extent} is not divisible by factor {factor}"
ERROR_NOT_NORMALIZED = "Distribution sums to {total}, expected 1"
ERROR_DEGENERATE_SCENE = "No synthetic box is visible from the camera"


def get_grid_ranges(preset: str) -> Tuple[Tuple[float, float], ...]:
    """Get grid ranges for a named preset."""
    try:
        return GRID_PRESETS[preset.lower()]
    except KeyError:
        raise KeyError(f"Unknown grid preset: {preset}") from None


def tensor_dtype_code(dtype_str: str) -> int:
    """Get the TensorFile dtype code for a little-endian numpy dtype string."""
    for code, name in TENSOR_DTYPES.items():
        if name == dtype_str:
            return code
    raise KeyError(f"Unsupported tensor dtype: {dtype_str}")
