"""Shared fixtures."""

import numpy as np
import pytest

from src.services.discretization import DiscretizationSpec
from src.services.geometry import GridSpec, canonical_calibration, sensor_to_camera_axes
from src.utils.cache import SamplingCache

# Excerpt of a KITTI object-detection calibration file
KITTI_CALIB_TEXT = """P0: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 0.000000000000e+00 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.875744000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03
P3: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.395242000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.199936000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.729905000000e-03
R0_rect: 9.999239000000e-01 9.837760000000e-03 -7.445048000000e-03 -9.869795000000e-03 9.999421000000e-01 -4.278459000000e-03 7.402527000000e-03 4.351614000000e-03 9.999631000000e-01
Tr_velo_to_cam: 7.533745000000e-03 -9.999714000000e-01 -6.166020000000e-04 -4.069766000000e-03 1.480249000000e-02 7.280733000000e-04 -9.998902000000e-01 -7.631618000000e-02 9.998621000000e-01 7.523790000000e-03 1.480755000000e-02 -2.717806000000e-01
Tr_imu_to_velo: 9.999976000000e-01 7.553071000000e-04 -2.035826000000e-03 -8.086759000000e-01 -7.854027000000e-04 9.998898000000e-01 -1.482298000000e-02 3.195559000000e-01 2.024406000000e-03 1.482454000000e-02 9.998881000000e-01 -7.997231000000e-01

"""


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20200000)


@pytest.fixture
def kitti_calib_file(tmp_path):
    """KITTI calibration file on disk."""
    path = tmp_path / "000000.txt"
    path.write_text(KITTI_CALIB_TEXT)
    return path


@pytest.fixture
def camera_calib():
    """Canonical 200 px focal camera, 256 x 128 image, quarter-resolution features."""
    return canonical_calibration(200.0, 256, 128, feature_downsample=4)


@pytest.fixture
def sensor_calib():
    """Canonical camera looking along the sensor-frame x axis."""
    return canonical_calibration(200.0, 256, 128, feature_downsample=4, extrinsic=sensor_to_camera_axes())


@pytest.fixture
def small_grid():
    """Quarter-size grid: 64 x 64 x 8 voxels of 0.5 m."""
    return GridSpec(x_range=(2.0, 34.0), y_range=(-16.0, 16.0), z_range=(-2.0, 2.0), voxel_size=(0.5, 0.5, 0.5))


@pytest.fixture
def lid16():
    """LID discretization, 16 bins over [2, 46.8] m with an overflow bin."""
    return DiscretizationSpec(mode="LID", d_min=2.0, d_max=46.8, num_bins=16)


@pytest.fixture
def sampling_cache():
    """Private enabled sampling cache."""
    return SamplingCache(max_size=8, enabled=True)
