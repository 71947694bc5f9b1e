"""
Unit tests for object insertion and segmented sampling
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.cli.synthetic import sphere_scene, voxelize
from src.composer.insertion import (CompositeField, InsertionPose, SegmentedSamplerConfig, composite_eval,
                                    load_pose, object_bbox_in_scene, render_composite, render_samples,
                                    save_pose, segmented_ray_samples, segmented_samples)
from src.field_core.camera import CameraModel, Ray, intersect_aabb
from src.field_core.field import IntrinsicField
from src.field_core.rendering import SamplerConfig, render_rays, render_view
from src.field_core.sampling import stratified_samples
from src.utils.errors import ConfigError, InvalidArgumentError


def _rot_z(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _cube(lo=-0.5, hi=0.5, res=(4, 4, 4), sigma=0.0, refl=(0.2, 0.8, 0.2), shade=0.5):
    fld = IntrinsicField.empty([lo] * 3, [hi] * 3, res)
    fld.density[:] = sigma
    fld.reflectance[:] = refl
    fld.shading[:] = shade
    return fld


class TestPose:
    """Test insertion poses and the object AABB"""

    def test_identity_bbox(self):
        lo, hi = object_bbox_in_scene(_cube(), InsertionPose())
        np.testing.assert_allclose(lo, -0.5)
        np.testing.assert_allclose(hi, 0.5)

    def test_translated_bbox(self):
        lo, hi = object_bbox_in_scene(_cube(), InsertionPose(translation=[1.0, 2.0, 3.0]))
        np.testing.assert_allclose(lo, [0.5, 1.5, 2.5])
        np.testing.assert_allclose(hi, [1.5, 2.5, 3.5])

    def test_rotated_cube_widens(self):
        lo, hi = object_bbox_in_scene(_cube(), InsertionPose(rotation=_rot_z(45.0)))
        np.testing.assert_allclose((hi - lo)[:2], np.sqrt(2.0))
        assert (hi - lo)[2] == pytest.approx(1.0)

    def test_inverse(self):
        pose = InsertionPose(_rot_z(30.0), [0.1, -0.2, 0.3], 2.0)
        p = np.array([[0.3, 0.4, -0.5]])
        np.testing.assert_allclose(pose.inverse().apply(pose.apply(p)), p)
        np.testing.assert_allclose(pose.apply_inverse(pose.apply(p)), p)

    def test_invalid_pose(self):
        with pytest.raises(InvalidArgumentError):
            InsertionPose(scale=0.0).validate()
        with pytest.raises(InvalidArgumentError):
            InsertionPose(rotation=np.diag([1.0, 1.0, -1.0])).validate()

    def test_pose_file(self, tmp_path):
        pose = InsertionPose(_rot_z(20.0), [0.5, 0.0, -0.1], 0.75)
        save_pose(tmp_path / "pose.txt", pose)
        back = load_pose(tmp_path / "pose.txt")
        np.testing.assert_allclose(back.rotation, pose.rotation)
        assert back.scale == pytest.approx(0.75)

    def test_pose_file_needs_scale_line(self, tmp_path):
        (tmp_path / "pose.txt").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n")
        with pytest.raises(ConfigError):
            load_pose(tmp_path / "pose.txt")


class TestSegmentedSampling:
    """Test boosted sampling inside the object box"""

    def test_miss_equals_stratified(self):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 2.0)
        config = SegmentedSamplerConfig(n_scene=32)
        seg = segmented_samples(ray, config, (np.array([0, 5, 5]), np.array([1, 6, 6])))
        base = stratified_samples(ray, 32)
        np.testing.assert_array_equal(seg.ts, base.ts)
        np.testing.assert_array_equal(seg.deltas, base.deltas)

    def test_half_span_count(self):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 2.0)
        seg = segmented_samples(ray, SegmentedSamplerConfig(n_scene=64, boost=4.0),
                                (np.array([1.0, -1, -1]), np.array([5.0, 1, 1])))
        assert abs(len(seg) - (32 + 4 * 32)) <= 1
        assert seg.deltas.sum() == pytest.approx(2.0)

    @given(st.floats(0.05, 1.9), st.floats(0.01, 1.0), st.integers(2, 96), st.floats(1.0, 8.0))
    @settings(max_examples=60, deadline=None)
    def test_never_fewer_than_base(self, start, width, n_scene, boost):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 2.0)
        seg = segmented_samples(ray, SegmentedSamplerConfig(n_scene, boost),
                                (np.array([start, -1, -1]), np.array([start + width, 1, 1])))
        assert len(seg) >= n_scene
        assert np.all(np.diff(seg.ts) > 0)
        assert seg.deltas.sum() == pytest.approx(2.0)

    @given(st.floats(0.1, 1.8))
    @settings(max_examples=40, deadline=None)
    def test_thin_plate_is_always_sampled(self, plate_start):
        thickness = 0.01
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 2.0)
        config = SegmentedSamplerConfig(n_scene=64, boost=8.0)
        assert 2.0 / 64 > thickness > 2.0 / (64 * 8)
        seg = segmented_samples(ray, config, (np.array([plate_start, -1, -1]),
                                              np.array([plate_start + thickness, 1, 1])))
        assert np.any((seg.ts >= plate_start) & (seg.ts <= plate_start + thickness))

    @pytest.mark.parametrize("object_aabb", [
        (np.array([-0.3, -0.3, -0.3]), np.array([0.3, 0.3, 0.3])),
        (np.array([0.5, -0.05, -0.05]), np.array([0.5005, 0.05, 0.05])),
        (np.array([5.0, 5.0, 5.0]), np.array([6.0, 6.0, 6.0])),
    ])
    def test_pixel_batch_matches_per_ray(self, object_aabb):
        cam = CameraModel.look_at([3.0, 0.4, 0.3], [0, 0, 0], 12, 9, 60.0)
        bbox = (np.full(3, -1.0), np.full(3, 1.0))
        config = SegmentedSamplerConfig(n_scene=24, boost=4.0)
        origins, dirs, ts, deltas = segmented_ray_samples(cam, bbox, object_aabb, config)
        t_near, t_far, hit = intersect_aabb(origins, dirs, *bbox)
        assert ts.shape[0] == cam.width * cam.height
        assert not hit.all()
        for i in range(len(origins)):
            if not hit[i]:
                np.testing.assert_array_equal(ts[i, :24], np.linspace(0.0, 1.0, 24))
                np.testing.assert_array_equal(deltas[i], 0.0)
                continue
            ref = segmented_samples(Ray(origins[i], dirs[i], float(t_near[i]), float(t_far[i])), config,
                                    object_aabb)
            n = len(ref)
            np.testing.assert_allclose(ts[i, :n], ref.ts, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(deltas[i, :n], ref.deltas, rtol=1e-12, atol=1e-12)
            np.testing.assert_array_equal(ts[i, n:], ref.ts[-1])
            np.testing.assert_array_equal(deltas[i, n:], 0.0)


class TestCompositeEval:
    """Test density addition and density-weighted blending"""

    def test_empty_object_returns_scene(self):
        scene = voxelize(sphere_scene(), (8, 8, 8))
        p = np.random.default_rng(0).uniform(-0.2, 0.2, (50, 3))
        sigma, refl, shade = composite_eval(scene, _cube(sigma=0.0), InsertionPose(), p)
        s_sigma, s_refl, s_shade = scene.evaluate(p)
        np.testing.assert_array_equal(sigma, s_sigma)
        np.testing.assert_allclose(refl, s_refl)
        np.testing.assert_allclose(shade, s_shade)

    def test_empty_scene_returns_scaled_object(self):
        scene = _cube(-1.0, 1.0, sigma=0.0)
        obj = _cube(sigma=6.0)
        sigma, refl, shade = composite_eval(scene, obj, InsertionPose(scale=2.0), np.array([[0.1, 0.2, 0.3]]))
        assert sigma[0] == pytest.approx(3.0)
        np.testing.assert_allclose(refl[0], [0.2, 0.8, 0.2])
        assert shade[0] == pytest.approx(0.5)

    def test_equal_weight_mean(self):
        scene = _cube(-1.0, 1.0, sigma=1.0, refl=(1.0, 0.0, 0.0))
        obj = _cube(sigma=1.0, refl=(0.0, 1.0, 0.0))
        _, refl, _ = composite_eval(scene, obj, InsertionPose(), np.array([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(refl[0], [0.5, 0.5, 0.0])

    def test_vacuum_is_black(self):
        _, refl, shade = composite_eval(_cube(-1, 1), _cube(), InsertionPose(), np.array([[0.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(refl, 0.0)
        np.testing.assert_array_equal(shade, 0.0)


class TestRenderComposite:
    """Test composite rendering against scene-only rendering"""

    @pytest.fixture(scope="class")
    def scene(self):
        return voxelize(sphere_scene(radius=0.4), (16, 16, 16))

    @pytest.fixture(scope="class")
    def cam(self):
        return CameraModel.look_at([3.0, 0.5, 0.5], [0, 0, 0], 12, 12)

    def test_zero_density_object_changes_nothing(self, scene, cam):
        obj = _cube(-0.3, 0.3, sigma=0.0)
        pose = InsertionPose(translation=[0.0, 0.5, 0.3])
        config = SegmentedSamplerConfig(n_scene=48)
        composite = render_composite(scene, obj, pose, cam, config)
        origins, dirs, ts, deltas = segmented_ray_samples(cam, (scene.bbox_min, scene.bbox_max),
                                                          object_bbox_in_scene(obj, pose), config)
        alone = render_samples(scene, cam, origins, dirs, ts, deltas)
        np.testing.assert_allclose(composite.rgb, alone.rgb, atol=1e-6)
        np.testing.assert_allclose(composite.alpha, alone.alpha, atol=1e-6)

    def test_alpha_is_monotone(self, scene, cam):
        obj = _cube(-0.3, 0.3, sigma=20.0)
        pose = InsertionPose(translation=[0.6, 0.0, 0.0])
        config = SegmentedSamplerConfig(n_scene=48)
        composite = render_composite(scene, obj, pose, cam, config)
        origins, dirs, ts, deltas = segmented_ray_samples(cam, (scene.bbox_min, scene.bbox_max),
                                                          object_bbox_in_scene(obj, pose), config)
        alone = render_samples(scene, cam, origins, dirs, ts, deltas)
        assert np.all(composite.alpha >= alone.alpha - 1e-6)

    def test_swapping_roles_renders_identically(self, scene):
        obj = voxelize(sphere_scene(radius=0.3, reflectance=(0.1, 0.2, 0.9)), (12, 12, 12))
        pose = InsertionPose(_rot_z(30.0), [0.3, -0.2, 0.1], 1.0)
        cam = CameraModel.look_at([3.0, 0.2, 0.4], [0, 0, 0], 8, 8)
        origins, dirs = cam.pixel_rays()
        ts = np.tile(np.linspace(1.0, 5.0, 96), (len(origins), 1))
        deltas = np.full(ts.shape, 4.0 / 96)

        forward = render_rays(CompositeField(scene, obj, pose), origins, dirs, ts, deltas)
        inv = pose.inverse()
        swapped = render_rays(CompositeField(obj, scene, inv), pose.apply_inverse(origins),
                              dirs @ pose.rotation, ts, deltas)
        np.testing.assert_allclose(forward.rgb, swapped.rgb, atol=1e-5)
        np.testing.assert_allclose(forward.alpha, swapped.alpha, atol=1e-5)

    def test_thin_plate_needs_boost(self):
        scene = IntrinsicField.empty([-1, -1, -1], [1, 1, 1], (4, 4, 4))
        plate = IntrinsicField.empty([-0.5, -0.5, 0.0], [0.5, 0.5, 0.02], (8, 8, 2))
        plate.density[:] = 500.0
        plate.reflectance[:] = 0.7
        plate.shading[:] = 1.0
        cam = CameraModel.look_at([0.0, 0.0, 3.0], [0, 0, 0], 12, 12, 10.0, up=(0.0, 1.0, 0.0))
        base = render_view(CompositeField(scene, plate, InsertionPose()), cam, SamplerConfig(n_samples=32))
        boosted = render_composite(scene, plate, InsertionPose(), cam, SegmentedSamplerConfig(32, 4.0))
        assert base.alpha.mean() < 0.2
        assert boosted.alpha.mean() > 0.8
