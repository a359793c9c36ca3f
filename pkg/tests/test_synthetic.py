"""Tests for synthetic box scenes."""

import numpy as np
import pytest

from src.services.depth_labels import generate_labels
from src.services.diagnostics import pixel_entropies
from src.services.discretization import depth_to_bin
from src.services.frustum_lift import softmax_normalize
from src.services.geometry import GridSpec
from src.services.synthetic import (
    SyntheticBox,
    SyntheticScene,
    random_scene,
    render_depth,
    synth_scene,
)
from src.utils.validators import ConfigurationError, DegenerateScene


@pytest.fixture
def tall_grid():
    """Grid tall enough to hold a wall that fills the whole view at 10 m."""
    return GridSpec(x_range=(2.0, 34.0), y_range=(-16.0, 16.0), z_range=(-8.0, 8.0), voxel_size=(0.5, 0.5, 0.5))


@pytest.fixture
def wall(sensor_calib, tall_grid):
    """Box whose front face is a wall at x = 10 m covering every pixel."""
    box = SyntheticBox(center=(12.0, 0.0, 0.0), extents=(4.0, 20.0, 12.0), signature=(1.0, 2.0, 3.0))
    return SyntheticScene(boxes=[box], calib=sensor_calib, grid=tall_grid)


def _plane_oracle(box, u, v, f, cx, cy):
    """Nearest hit of the sensor-frame ray through (u, v) with the six box faces."""
    direction = np.array([1.0, -(u - cx) / f, -(v - cy) / f])
    lower, upper = box.lower, box.upper
    best = np.inf
    for axis in range(3):
        if direction[axis] == 0:
            continue
        for plane in (lower[axis], upper[axis]):
            t = plane / direction[axis]
            if t <= 0:
                continue
            point = t * direction
            others = [a for a in range(3) if a != axis]
            if all(lower[a] - 1e-9 <= point[a] <= upper[a] + 1e-9 for a in others):
                best = min(best, t)
    return best


class TestSyntheticBox:
    """Test box validation."""

    def test_corners(self):
        box = SyntheticBox(center=(0.0, 0.0, 0.0), extents=(2.0, 4.0, 6.0), signature=(1.0,))
        corners = box.corners()
        assert corners.shape == (8, 3)
        np.testing.assert_array_equal(corners.min(axis=0), [-1, -2, -3])
        np.testing.assert_array_equal(corners.max(axis=0), [1, 2, 3])

    def test_bad_extents(self):
        with pytest.raises(ConfigurationError):
            SyntheticBox(center=(0.0, 0.0, 0.0), extents=(0.0, 1.0, 1.0), signature=(1.0,))

    def test_empty_signature(self):
        with pytest.raises(ConfigurationError):
            SyntheticBox(center=(0.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=())


class TestSceneValidation:
    """Test scene configuration errors."""

    def test_negative_sigma(self, sensor_calib, small_grid):
        with pytest.raises(ConfigurationError):
            SyntheticScene(boxes=[], calib=sensor_calib, grid=small_grid, sigma=-1.0)

    def test_box_outside_grid(self, sensor_calib, small_grid):
        box = SyntheticBox(center=(10.0, 0.0, 1.9), extents=(1.0, 1.0, 1.0), signature=(1.0,))
        with pytest.raises(ConfigurationError):
            SyntheticScene(boxes=[box], calib=sensor_calib, grid=small_grid)

    def test_inconsistent_channels(self, sensor_calib, small_grid):
        boxes = [
            SyntheticBox(center=(10.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=(1.0,)),
            SyntheticBox(center=(12.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=(1.0, 2.0)),
        ]
        with pytest.raises(ConfigurationError):
            SyntheticScene(boxes=boxes, calib=sensor_calib, grid=small_grid)

    def test_no_boxes(self, sensor_calib, small_grid, lid16):
        with pytest.raises(DegenerateScene):
            synth_scene(SyntheticScene(boxes=[], calib=sensor_calib, grid=small_grid), lid16)

    def test_invisible_box(self, sensor_calib, small_grid, lid16):
        box = SyntheticBox(center=(3.0, 15.0, 0.0), extents=(0.4, 0.4, 0.4), signature=(1.0,))
        with pytest.raises(DegenerateScene):
            synth_scene(SyntheticScene(boxes=[box], calib=sensor_calib, grid=small_grid), lid16)


class TestRenderDepth:
    """Test ray casting against boxes."""

    def test_matches_plane_oracle(self, sensor_calib, rng):
        boxes = [
            SyntheticBox(center=(10.0, 1.0, 0.0), extents=(2.0, 3.0, 1.5), signature=(1.0,)),
            SyntheticBox(center=(15.0, -2.0, 0.5), extents=(3.0, 2.0, 2.0), signature=(1.0,)),
        ]
        u = rng.uniform(0, 256, size=1000)
        v = rng.uniform(0, 128, size=1000)
        depth, box_id = render_depth(sensor_calib, boxes, u, v)

        expected = np.array(
            [min(_plane_oracle(box, a, b, 200.0, 128.0, 64.0) for box in boxes) for a, b in zip(u, v)]
        )
        hit = np.isfinite(expected)
        assert hit.any() and (~hit).any()
        np.testing.assert_array_equal(np.isfinite(depth), hit)
        np.testing.assert_allclose(depth[hit], expected[hit], atol=1e-4)
        assert np.all(box_id[~hit] == -1)

    def test_occlusion(self, sensor_calib):
        boxes = [
            SyntheticBox(center=(20.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=(1.0,)),
            SyntheticBox(center=(8.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=(1.0,)),
        ]
        depth, box_id = render_depth(sensor_calib, boxes, np.array([128.0]), np.array([64.0]))
        assert depth[0] == pytest.approx(7.5)
        assert box_id[0] == 1


class TestSynthScene:
    """Test rendered features, logits, depth and clouds."""

    def test_wall_fills_view(self, wall, lid16):
        result = synth_scene(wall, lid16)
        assert result.fg_mask.all()
        assert result.features.shape == (64, 32, 3)
        np.testing.assert_array_equal(result.features[5, 7], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(result.logits.argmax(axis=-1), depth_to_bin(lid16, 10.0))
        np.testing.assert_allclose(result.depth.values, 10.0, atol=1e-6)

    def test_wall_labels_from_cloud(self, wall, lid16):
        result = synth_scene(wall, lid16, cloud_stride=2)
        labels = generate_labels(wall.calib, result.cloud, lid16)
        np.testing.assert_array_equal(labels.argmax(axis=-1), depth_to_bin(lid16, 10.0))

    def test_smeared_distribution(self, wall, lid16):
        wall.sigma = 1e6
        result = synth_scene(wall, lid16)
        entropies = pixel_entropies(softmax_normalize(result.logits))
        np.testing.assert_allclose(entropies, np.log(17), rtol=0.01)

    def test_background(self, sensor_calib, small_grid, lid16):
        box = SyntheticBox(center=(10.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), signature=(1.0, 1.0))
        result = synth_scene(SyntheticScene(boxes=[box], calib=sensor_calib, grid=small_grid), lid16)
        background = ~result.fg_mask
        assert background.any() and result.fg_mask.any()
        assert np.all(result.features[background] == 0)
        assert np.all(result.logits.argmax(axis=-1)[background] == 16)
        assert result.visible_boxes == 1
        assert result.to_dict()["foreground_pixels"] == int(result.fg_mask.sum())

    def test_cloud_size(self, wall, lid16):
        assert len(synth_scene(wall, lid16, cloud_stride=4).cloud) == 64 * 32


class TestRandomScene:
    """Test random single-box scenes."""

    def test_box_at_bin_center(self, rng, sensor_calib, lid16, small_grid):
        for _ in range(10):
            scene = random_scene(rng, sensor_calib, lid16, small_grid, channels=4)
            box = scene.boxes[0]
            assert len(box.signature) == 4
            assert all(small_grid.contains(corner) for corner in box.corners())
            assert np.isclose(box.center[0], lid16.centers[3:9]).any()
            assert synth_scene(scene, lid16).visible_boxes == 1

    def test_sigma_carried(self, rng, sensor_calib, lid16, small_grid):
        assert random_scene(rng, sensor_calib, lid16, small_grid, sigma=2.5).sigma == 2.5
