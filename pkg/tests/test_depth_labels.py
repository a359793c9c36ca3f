"""Tests for depth-map projection, completion and label generation."""

import numpy as np
import pytest

from src.services.depth_labels import (
    Box2D,
    DepthMap,
    PointCloud,
    complete_depth,
    depth_map_distribution,
    downsample_depth,
    foreground_mask,
    generate_labels,
    one_hot_labels,
    project_cloud,
    read_boxes_csv,
    read_velodyne,
    write_boxes_csv,
    write_velodyne,
)
from src.services.discretization import DiscretizationSpec, depth_to_bin
from src.services.geometry import canonical_calibration, sensor_to_camera_axes
from src.utils.validators import (
    ConfigurationError,
    DataError,
    EmptyDepthMap,
    IndivisibleDimensions,
)


def _wall_cloud(calib, depth, stride=1, offset=0.5):
    """Camera-frame points of a fronto-parallel wall, one per lattice pixel."""
    us, vs = np.meshgrid(
        np.arange(0, calib.image_width, stride) + offset,
        np.arange(0, calib.image_height, stride) + offset,
        indexing="ij",
    )
    f, cx, cy = calib.P[0, 0], calib.P[0, 2], calib.P[1, 2]
    xyz = np.column_stack(
        [(us.ravel() - cx) * depth / f, (vs.ravel() - cy) * depth / f, np.full(us.size, depth)]
    )
    return PointCloud(points=np.column_stack([xyz, np.ones(us.size)]))


@pytest.fixture
def small_calib():
    return canonical_calibration(50.0, 64, 32, feature_downsample=4)


class TestProjectCloud:
    """Test sparse depth maps from point clouds."""

    def test_wall_depth(self, small_calib):
        sparse = project_cloud(small_calib, _wall_cloud(small_calib, 12.5))
        assert sparse.values.shape == (64, 32)
        assert sparse.is_dense
        np.testing.assert_allclose(sparse.values[sparse.valid], 12.5, atol=1e-4)

    def test_z_buffer_keeps_nearest(self, small_calib):
        cloud = PointCloud(points=[[0.0, 0.0, 10.0, 1.0], [0.0, 0.0, 5.0, 1.0]])
        sparse = project_cloud(small_calib, cloud)
        assert sparse.values[32, 16] == pytest.approx(5.0)
        assert sparse.valid.sum() == 1

    def test_points_behind_dropped(self, small_calib):
        cloud = PointCloud(points=[[0.0, 0.0, -10.0, 1.0], [100.0, 0.0, 1.0, 1.0]])
        assert not project_cloud(small_calib, cloud).valid.any()

    def test_transformed_cloud(self, small_calib):
        cloud = PointCloud(points=[[10.0, 0.0, 0.0, 0.7]])
        moved = cloud.transformed(sensor_to_camera_axes())
        np.testing.assert_allclose(moved.points[0], [0.0, 0.0, 10.0, 0.7], atol=1e-6)


class TestCompletion:
    """Test dilation-based completion."""

    def test_checkerboard_plane(self, small_calib):
        sparse = project_cloud(small_calib, _wall_cloud(small_calib, 20.0))
        checker = (np.add.outer(np.arange(64), np.arange(32)) % 2).astype(bool)
        holes = DepthMap(values=np.where(checker, sparse.values, 0.0), valid=checker)
        dense = complete_depth(holes)
        assert dense.is_dense
        np.testing.assert_allclose(dense.values, 20.0, atol=1e-6)

    def test_valid_pixels_unchanged(self, rng):
        values = rng.uniform(5, 30, size=(10, 8))
        valid = rng.random((10, 8)) > 0.7
        valid[0, 0] = True
        dense = complete_depth(DepthMap(values=np.where(valid, values, 0.0), valid=valid))
        np.testing.assert_array_equal(dense.values[valid], values[valid])

    def test_fills_with_neighbor_minimum(self):
        values = np.zeros((3, 3))
        valid = np.zeros((3, 3), dtype=bool)
        values[0, 0], values[2, 2] = 4.0, 9.0
        valid[0, 0] = valid[2, 2] = True
        dense = complete_depth(DepthMap(values=values, valid=valid))
        assert dense.values[1, 1] == 4.0
        assert dense.values[2, 1] == 9.0

    def test_single_pixel_fills_everything(self):
        values = np.zeros((7, 5))
        values[3, 2] = 8.0
        dense = complete_depth(DepthMap(values=values))
        np.testing.assert_array_equal(dense.values, 8.0)

    def test_empty(self):
        with pytest.raises(EmptyDepthMap):
            complete_depth(DepthMap(values=np.zeros((4, 4))))


class TestDownsample:
    """Test block-minimum downsampling."""

    def test_block_minimum(self):
        values = np.arange(1, 17, dtype=np.float64).reshape(4, 4)
        small = downsample_depth(DepthMap(values=values), 2)
        np.testing.assert_array_equal(small.values, [[1, 3], [9, 11]])

    def test_indivisible(self):
        with pytest.raises(IndivisibleDimensions):
            downsample_depth(DepthMap(values=np.ones((5, 4))), 2)

    def test_completed_depths_stay_within_sparse_range(self, small_calib, rng):
        xyz = rng.uniform([-20.0, -10.0, 4.0], [20.0, 10.0, 40.0], size=(300, 3))
        sparse = project_cloud(small_calib, PointCloud(points=np.column_stack([xyz, np.ones(300)])))
        low, high = sparse.values[sparse.valid].min(), sparse.values[sparse.valid].max()
        feature = downsample_depth(complete_depth(sparse), 4)
        assert feature.is_dense
        assert np.all(feature.values >= low)
        assert np.all(feature.values <= high)


class TestOneHotLabels:
    """Test one-hot label construction."""

    def test_overflow(self, lid16):
        depth = DepthMap(values=np.array([[10.0, 60.0], [1.0, 2.5]]))
        labels = one_hot_labels(depth, lid16)
        assert labels.shape == (2, 2, 17)
        np.testing.assert_array_equal(labels.sum(axis=-1), 1.0)
        assert labels[0, 1, 16] == 1.0
        assert labels[1, 0, 16] == 1.0
        assert labels[0, 0, depth_to_bin(lid16, 10.0)] == 1.0

    def test_requires_overflow_bin(self):
        spec = DiscretizationSpec(num_bins=16, overflow_bin=False)
        with pytest.raises(ConfigurationError):
            one_hot_labels(DepthMap(values=np.full((2, 2), 10.0)), spec)

    def test_requires_dense(self, lid16):
        with pytest.raises(DataError):
            one_hot_labels(DepthMap(values=np.array([[10.0, 0.0]])), lid16)

    def test_depth_map_distribution(self, lid16):
        dist = depth_map_distribution(DepthMap(values=np.array([[10.0, 60.0]])), lid16)
        assert dist.shape == (1, 2, 16)
        assert dist[0, 0].sum() == 1.0
        assert dist[0, 1].sum() == 0.0


class TestGenerateLabels:
    """Test the full label pipeline."""

    def test_plane_hot_bins(self, small_calib, lid16):
        """Test a sparse plane cloud labels almost every pixel with the plane's bin."""
        cloud = _wall_cloud(small_calib, 17.3, stride=2)
        labels = generate_labels(small_calib, cloud, lid16)
        assert labels.shape == (16, 8, 17)
        hot = labels.argmax(axis=-1)
        assert np.mean(hot == depth_to_bin(lid16, 17.3)) >= 0.99

    def test_point_order_irrelevant(self, small_calib, lid16, rng):
        xyz = rng.uniform([-20.0, -10.0, 3.0], [20.0, 10.0, 50.0], size=(3000, 3))
        cloud = PointCloud(points=np.column_stack([xyz, rng.random(3000)]))
        shuffled = PointCloud(points=cloud.points[rng.permutation(3000)])
        np.testing.assert_array_equal(
            generate_labels(small_calib, shuffled, lid16), generate_labels(small_calib, cloud, lid16)
        )


class TestForegroundMask:
    """Test box rasterization at feature resolution."""

    def test_block_centers(self):
        mask = foreground_mask([Box2D(0, 0, 8, 4)], 16, 8, 4)
        assert mask.shape == (4, 2)
        np.testing.assert_array_equal(mask, [[True, False], [True, False], [False, False], [False, False]])

    def test_clamped_and_ignored_boxes(self):
        mask = foreground_mask([Box2D(-10, -10, 3, 3), Box2D(100, 100, 120, 120)], 16, 8, 4)
        assert mask[0, 0]
        assert mask.sum() == 1

    def test_degenerate_box(self):
        with pytest.raises(DataError):
            Box2D(5, 5, 5, 10)


class TestFiles:
    """Test velodyne and box files."""

    def test_velodyne_round_trip(self, tmp_path, rng):
        cloud = PointCloud(points=rng.normal(size=(20, 4)))
        path = tmp_path / "000000.bin"
        write_velodyne(path, cloud)
        assert path.stat().st_size == 20 * 4 * 4
        np.testing.assert_array_equal(read_velodyne(path).points, cloud.points)

    def test_velodyne_bad_size(self, tmp_path):
        path = tmp_path / "bad.bin"
        np.zeros(5, dtype="<f4").tofile(path)
        with pytest.raises(DataError):
            read_velodyne(path)

    def test_boxes_csv(self, tmp_path):
        path = tmp_path / "boxes.csv"
        boxes = [Box2D(1, 2, 30, 40, "Car"), Box2D(5.5, 6, 7, 8, "Pedestrian")]
        write_boxes_csv(path, boxes)
        assert read_boxes_csv(path) == boxes

    def test_boxes_csv_bad_row(self, tmp_path):
        path = tmp_path / "boxes.csv"
        path.write_text("Car,1,2,3\n")
        with pytest.raises(DataError):
            read_boxes_csv(path)
