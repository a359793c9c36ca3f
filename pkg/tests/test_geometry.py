"""Tests for camera projection, calibration files and grid geometry."""

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from src.services.geometry import (
    CameraCalibration,
    GridSpec,
    canonical_calibration,
    format_kitti_calibration,
    image_to_feature_coords,
    load_kitti_calibration,
    load_rigid_transform,
    parse_kitti_calibration,
    project_point,
    project_points,
    sensor_to_camera_axes,
    transform_points,
    voxel_centers,
)
from src.utils.validators import ConfigurationError, NonPositiveDepth
from tests.conftest import KITTI_CALIB_TEXT


@pytest.fixture
def simple_calib():
    return canonical_calibration(100.0, 200, 100)


class TestProjection:
    """Test pinhole projection."""

    def test_project_point(self, simple_calib):
        u, v, d = project_point(simple_calib, np.array([1.0, 2.0, 10.0]))
        assert (u, v, d) == pytest.approx((110.0, 70.0, 10.0))

    def test_principal_point(self, simple_calib):
        u, v, _ = project_point(simple_calib, np.array([0.0, 0.0, 5.0]))
        assert (u, v) == (100.0, 50.0)

    @pytest.mark.parametrize("z", [-1.0, 0.0, 1e-9])
    def test_non_positive_depth(self, simple_calib, z):
        with pytest.raises(NonPositiveDepth):
            project_point(simple_calib, np.array([0.0, 0.0, z]))

    def test_vectorized_agrees(self, simple_calib, rng):
        points = rng.uniform([-5, -5, 1], [5, 5, 40], size=(50, 3))
        uv, depth = project_points(simple_calib, points)
        for point, (u, v), d in zip(points, uv, depth):
            assert (u, v, d) == pytest.approx(project_point(simple_calib, point))

    def test_vectorized_behind_is_nan(self, simple_calib):
        uv, depth = project_points(simple_calib, np.array([[0.0, 0.0, -2.0], [0.0, 0.0, 2.0]]))
        assert np.isnan(uv[0]).all()
        assert depth[0] == -2.0
        assert np.isfinite(uv[1]).all()

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(
        x=st.floats(-20, 20),
        y=st.floats(-20, 20),
        z=st.floats(0.5, 80),
    )
    def test_depth_is_camera_z(self, x, y, z):
        """Test the canonical camera reports z as projective depth."""
        calib = canonical_calibration(100.0, 200, 100)
        _, _, d = project_point(calib, np.array([x, y, z]))
        assert d == pytest.approx(z)

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(scale=st.floats(0.01, 100.0))
    def test_projection_matrix_scale_invariant(self, scale):
        """Test scaling P keeps the pixel and scales the depth."""
        P = np.array([[100.0, 3.0, 100.0, 5.0], [0.0, 100.0, 50.0, -2.0], [0.0, 0.0, 1.0, 0.1]])
        calib = CameraCalibration(P=P, image_width=200, image_height=100)
        scaled = CameraCalibration(P=P * scale, image_width=200, image_height=100)
        point = np.array([1.5, -0.7, 12.0])
        u, v, d = project_point(calib, point)
        u_s, v_s, d_s = project_point(scaled, point)
        assert (u_s, v_s) == pytest.approx((u, v), rel=1e-12)
        assert d_s == pytest.approx(scale * d, rel=1e-12)

    def test_feature_coords_scale_back(self, rng):
        u = rng.uniform(0, 1248, size=100)
        v = rng.uniform(0, 376, size=100)
        for downsample in (1, 2, 4, 8):
            u_f, v_f = image_to_feature_coords(u, v, downsample)
            np.testing.assert_allclose(u_f * downsample, u, rtol=1e-15)
            np.testing.assert_allclose(v_f * downsample, v, rtol=1e-15)

    def test_feature_coords_bad_downsample(self):
        with pytest.raises(ConfigurationError):
            image_to_feature_coords(1.0, 1.0, 0)


class TestCameraCalibration:
    """Test calibration validation."""

    def test_feature_dims(self, camera_calib):
        assert (camera_calib.feature_width, camera_calib.feature_height) == (64, 32)

    def test_bad_shape(self):
        with pytest.raises(ConfigurationError):
            CameraCalibration(P=np.eye(3), image_width=10, image_height=10)

    def test_degenerate_depth_row(self):
        P = np.zeros((3, 4))
        P[0, 0] = P[1, 1] = 1.0
        with pytest.raises(ConfigurationError):
            CameraCalibration(P=P, image_width=10, image_height=10)

    def test_indivisible_image(self):
        with pytest.raises(ConfigurationError):
            canonical_calibration(100.0, 250, 100, feature_downsample=4)

    def test_with_extrinsic(self, camera_calib):
        moved = camera_calib.with_extrinsic(sensor_to_camera_axes())
        np.testing.assert_array_equal(moved.P, camera_calib.P)
        assert moved.fingerprint() != camera_calib.fingerprint()

    def test_sensor_axes(self):
        """Test forward, left and up map to camera z, -x and -y."""
        axes = sensor_to_camera_axes()
        moved = transform_points(axes, np.eye(3))
        np.testing.assert_array_equal(moved, [[0, 0, 1], [-1, 0, 0], [0, -1, 0]])


class TestGridSpec:
    """Test grid geometry."""

    def test_kitti_dims(self):
        assert GridSpec.kitti().dims == (280, 376, 25)

    def test_waymo_dims(self):
        assert GridSpec.waymo().dims == (336, 320, 50)

    def test_small_grid(self, small_grid):
        assert small_grid.dims == (64, 64, 8)

    def test_not_a_multiple(self):
        with pytest.raises(ConfigurationError):
            GridSpec(x_range=(0, 1.05), y_range=(0, 1), z_range=(0, 1), voxel_size=(0.1, 0.1, 0.1))

    def test_empty_range(self):
        with pytest.raises(ConfigurationError):
            GridSpec(x_range=(1, 1), y_range=(0, 1), z_range=(0, 1), voxel_size=(0.5, 0.5, 0.5))

    def test_non_positive_voxel(self):
        with pytest.raises(ConfigurationError):
            GridSpec(x_range=(0, 1), y_range=(0, 1), z_range=(0, 1), voxel_size=(0.5, -0.5, 0.5))

    def test_voxel_centers(self, small_grid):
        centers = voxel_centers(small_grid)
        assert centers.shape == (64, 64, 8, 3)
        np.testing.assert_allclose(centers[0, 0, 0], [2.25, -15.75, -1.75])
        np.testing.assert_allclose(centers[-1, -1, -1], [33.75, 15.75, 1.75])

    @pytest.mark.parametrize("preset", ["kitti", "waymo"])
    def test_voxel_centers_strictly_inside(self, preset):
        grid = getattr(GridSpec, preset)()
        centers = voxel_centers(grid)
        for axis, (low, high) in enumerate(grid.ranges):
            assert centers[..., axis].min() > low
            assert centers[..., axis].max() < high

    def test_cell_of(self, small_grid):
        assert small_grid.cell_of(2.1, -15.9) == (0, 0)
        assert small_grid.cell_of(10.0, 0.2) == (16, 32)

    def test_contains(self, small_grid):
        assert small_grid.contains((10.0, 0.0, 0.0))
        assert not small_grid.contains((1.0, 0.0, 0.0))


class TestKittiCalibration:
    """Test KITTI calibration files."""

    def test_parse_keys(self):
        entries = parse_kitti_calibration(KITTI_CALIB_TEXT)
        assert set(entries) == {"P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam", "Tr_imu_to_velo"}
        assert entries["R0_rect"].size == 9

    def test_extracts_p2_exactly(self, kitti_calib_file):
        calib = load_kitti_calibration(kitti_calib_file, 1248, 376, 4)
        expected = np.array(
            [float(token) for token in KITTI_CALIB_TEXT.splitlines()[2].split()[1:]]
        ).reshape(3, 4)
        np.testing.assert_array_equal(calib.P, expected)
        np.testing.assert_array_equal(calib.extrinsic, np.eye(4))

    def test_sensor_frame_extrinsic(self, kitti_calib_file):
        calib = load_kitti_calibration(kitti_calib_file, 1248, 376, sensor_frame=True)
        entries = parse_kitti_calibration(KITTI_CALIB_TEXT)
        R0 = np.eye(4)
        R0[:3, :3] = entries["R0_rect"].reshape(3, 3)
        Tr = np.eye(4)
        Tr[:3, :] = entries["Tr_velo_to_cam"].reshape(3, 4)
        np.testing.assert_allclose(calib.extrinsic, R0 @ Tr)

    def test_velodyne_point_projects_into_image(self, kitti_calib_file):
        """Test a point 10 m ahead of the LiDAR lands near the image center column."""
        calib = load_kitti_calibration(kitti_calib_file, 1248, 376, sensor_frame=True)
        camera_point = transform_points(calib.extrinsic, np.array([[10.0, 0.0, 0.0]]))[0]
        u, v, d = project_point(calib, camera_point)
        assert 0 <= u < 1248 and 0 <= v < 376
        assert d == pytest.approx(9.73, abs=0.05)

    def test_missing_key(self, kitti_calib_file):
        with pytest.raises(ConfigurationError):
            load_kitti_calibration(kitti_calib_file, 1248, 376, key="P9")

    def test_non_numeric(self):
        with pytest.raises(ConfigurationError):
            parse_kitti_calibration("P2: 1 2 three")

    def test_format_then_load(self, tmp_path, camera_calib):
        path = tmp_path / "calib.txt"
        path.write_text(format_kitti_calibration({"P2": camera_calib.P}))
        loaded = load_kitti_calibration(path, 256, 128, 4)
        np.testing.assert_allclose(loaded.P, camera_calib.P)


class TestRigidTransform:
    """Test 4x4 transform files."""

    def test_load(self, tmp_path):
        path = tmp_path / "T.txt"
        path.write_text("1 0 0 1\n0 1 0 2\n0 0 1 3\n0 0 0 1\n")
        transform = load_rigid_transform(path)
        np.testing.assert_array_equal(transform_points(transform, np.zeros((1, 3))), [[1, 2, 3]])

    def test_wrong_count(self, tmp_path):
        path = tmp_path / "T.txt"
        path.write_text("1 0 0 1\n")
        with pytest.raises(ConfigurationError):
            load_rigid_transform(path)
