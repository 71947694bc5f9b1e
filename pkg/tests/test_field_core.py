"""
Unit tests for trilinear fields, sampling, cameras and volume rendering
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from src.cli.synthetic import sphere_gbuffer, sphere_scene, voxelize
from src.field_core.camera import CameraModel, Ray, intersect_aabb, load_camera, save_camera
from src.field_core.field import (IntrinsicField, central_gradient, central_gradient_adjoint, load_field,
                                  sample_field, save_field)
from src.field_core.rendering import (GBuffer, SamplerConfig, accumulation_weights, load_gbuffer,
                                      render_view, save_gbuffer, volume_render)
from src.field_core.sampling import SampleSet, cell_widths, stratified_depths, stratified_samples
from src.utils.errors import ConfigError, InvalidArgumentError, ParseError


class SlabEvaluator:
    """Density `sigma` for x >= x0, vacuum before; constant reflectance and shading"""

    def __init__(self, sigma, x0=0.0, reflectance=(0.6, 0.6, 0.6), shading=1.0):
        self.sigma = sigma
        self.x0 = x0
        self.reflectance = np.asarray(reflectance, dtype=np.float64)
        self.shading = shading

    def evaluate(self, points):
        sigma = np.where(points[..., 0] >= self.x0, self.sigma, 0.0)
        refl = np.broadcast_to(self.reflectance, points.shape).copy()
        return sigma, refl, np.full(points.shape[:-1], self.shading)

    def density_gradient(self, points):
        return np.zeros(points.shape)


class TwoColorEvaluator:
    """Constant density; red before x = 1.5, green after"""

    def evaluate(self, points):
        x = points[..., 0]
        refl = np.where((x < 1.5)[..., None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        return np.full(x.shape, np.log(2.0)), refl, np.ones(x.shape)

    def density_gradient(self, points):
        return np.zeros(points.shape)


def _random_field(res=(4, 5, 6), seed=0):
    rng = np.random.default_rng(seed)
    return IntrinsicField([-1, -1, -1], [1, 2, 3], rng.random(res) * 5,
                          rng.random(res + (3,)), rng.random(res))


class TestTrilinearField:
    """Test sample_field interpolation conventions"""

    def test_node_values_are_reproduced(self):
        fld = _random_field()
        nodes = fld.node_positions()
        sigma, refl, shade = sample_field(fld, nodes[1, 2, 3])
        assert sigma == pytest.approx(fld.density[1, 2, 3])
        np.testing.assert_allclose(refl, fld.reflectance[1, 2, 3])
        assert shade == pytest.approx(fld.shading[1, 2, 3])

    def test_outside_box_is_empty(self):
        fld = _random_field()
        sigma, refl, shade = sample_field(fld, np.array([[5.0, 0.0, 0.0], [0.0, -1.5, 0.0]]))
        np.testing.assert_array_equal(sigma, 0.0)
        np.testing.assert_array_equal(refl, 0.0)
        np.testing.assert_array_equal(shade, 0.0)

    def test_midpoint_is_linear(self):
        fld = IntrinsicField.empty([0, 0, 0], [1, 1, 1], (2, 2, 2))
        fld.density[1, :, :] = 2.0
        sigma, _, _ = sample_field(fld, np.array([0.5, 0.3, 0.7]))
        assert sigma == pytest.approx(1.0)

    def test_validate_rejects_bad_reflectance(self):
        fld = _random_field()
        fld.reflectance[0, 0, 0, 0] = 1.5
        with pytest.raises(InvalidArgumentError):
            fld.validate()

    def test_gradient_adjoint_is_transpose(self):
        """<G d, u> == <d, G^T u> for random d, u"""
        rng = np.random.default_rng(3)
        spacing = np.array([0.5, 0.25, 1.0])
        d = rng.normal(size=(4, 5, 3))
        u = rng.normal(size=(4, 5, 3, 3))
        lhs = (central_gradient(d, spacing) * u).sum()
        rhs = (d * central_gradient_adjoint(u, spacing)).sum()
        assert lhs == pytest.approx(rhs)


class TestFieldSerialization:
    """Test the IRCF container"""

    def test_round_trip(self, tmp_path):
        fld = _random_field()
        path = tmp_path / "f.ircf"
        save_field(path, fld)
        back = load_field(path)
        assert back.resolution == fld.resolution
        np.testing.assert_allclose(back.bbox_max, fld.bbox_max)
        np.testing.assert_allclose(back.density, fld.density, rtol=1e-6)
        np.testing.assert_allclose(back.reflectance, fld.reflectance, rtol=1e-6)
        np.testing.assert_allclose(back.shading, fld.shading, rtol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.ircf"
        save_field(path, _random_field())
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(ParseError) as err:
            load_field(path)
        assert err.value.offset == 0

    def test_truncated_grids(self, tmp_path):
        path = tmp_path / "f.ircf"
        save_field(path, _random_field())
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ParseError):
            load_field(path)


class TestSampling:
    """Test stratified sampling"""

    def test_stratum_centres(self):
        ts = stratified_samples(Ray([0, 0, 0], [1, 0, 0], 0.0, 1.0), 4).ts
        np.testing.assert_allclose(ts, [0.125, 0.375, 0.625, 0.875])

    def test_two_samples(self):
        ts = stratified_samples(Ray([0, 0, 0], [1, 0, 0], 2.0, 6.0), 2).ts
        np.testing.assert_allclose(ts, [3.0, 5.0])

    def test_rejects_single_sample(self):
        with pytest.raises(InvalidArgumentError):
            stratified_samples(Ray([0, 0, 0], [1, 0, 0], 0.0, 1.0), 1)

    @given(st.integers(0, 10_000), st.integers(2, 40), st.floats(0.0, 5.0), st.floats(0.1, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_jittered_samples_stay_in_their_strata(self, seed, n, t_near, span):
        ts = stratified_depths(t_near, t_near + span, n, jitter=True, rng=np.random.default_rng(seed))[0]
        step = span / n
        lower = t_near + np.arange(n) * step
        assert np.all(ts >= lower - 1e-9)
        assert np.all(ts <= lower + step + 1e-9)
        assert np.all(np.diff(ts) >= 0)

    @given(st.integers(2, 64), st.floats(0.0, 3.0), st.floats(0.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_cell_widths_cover_the_interval(self, n, t_near, span):
        ts = stratified_depths(t_near, t_near + span, n)[0]
        widths = cell_widths(ts, t_near, t_near + span)
        assert widths.sum() == pytest.approx(span)
        assert np.all(widths > 0)


class TestCamera:
    """Test pinhole camera geometry and files"""

    def test_projection_inverts_pixel_rays(self):
        cam = CameraModel.look_at([3.0, 1.0, 2.0], [0, 0, 0], 16, 12, 50.0)
        origins, dirs = cam.pixel_rays()
        u, v, z = cam.project(origins + 2.5 * dirs)
        rows, cols = np.meshgrid(np.arange(12), np.arange(16), indexing="ij")
        np.testing.assert_allclose(u, cols.ravel(), atol=1e-9)
        np.testing.assert_allclose(v, rows.ravel(), atol=1e-9)
        assert np.all(z > 0)

    def test_centre_pixel_looks_at_target(self):
        cam = CameraModel.look_at([0.0, -4.0, 0.0], [0, 0, 0], 9, 9)
        direction = cam.pixel_directions(np.array([4]), np.array([4]))[0]
        np.testing.assert_allclose(direction, [0.0, 1.0, 0.0], atol=1e-12)

    def test_file_round_trip(self, tmp_path):
        cam = CameraModel.look_at([1.0, 2.0, 3.0], [0, 0, 0], 20, 10)
        save_camera(tmp_path / "cam.txt", cam)
        back = load_camera(tmp_path / "cam.txt")
        assert (back.width, back.height) == (20, 10)
        np.testing.assert_allclose(back.rotation, cam.rotation)
        np.testing.assert_allclose(back.translation, cam.translation)

    def test_wrong_number_count(self):
        with pytest.raises(ConfigError):
            CameraModel.from_line("4 4 1 0 2 0 1 2 0 0 1")

    def test_skew_rejected(self):
        numbers = [10, 0.5, 2, 0, 10, 2, 0, 0, 1] + list(np.hstack([np.eye(3), np.zeros((3, 1))]).ravel())
        with pytest.raises(ConfigError):
            CameraModel.from_numbers(4, 4, numbers)

    def test_aabb_intersection(self):
        t_near, t_far, hit = intersect_aabb(np.array([[-2.0, 0, 0], [-2.0, 5.0, 0]]),
                                            np.array([[1.0, 0, 0], [1.0, 0, 0]]), -np.ones(3), np.ones(3))
        assert hit.tolist() == [True, False]
        assert t_near[0] == pytest.approx(1.0)
        assert t_far[0] == pytest.approx(3.0)


class TestVolumeRender:
    """Test the discrete quadrature"""

    def test_vacuum(self):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 1.0)
        out = volume_render(SlabEvaluator(0.0), ray, stratified_samples(ray, 16))
        np.testing.assert_array_equal(out.rgb, 0.0)
        assert out.alpha == 0.0
        assert out.depth == 0.0

    def test_opaque_slab(self):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.0, 2.0)
        ts = np.linspace(0.0, 2.0, 401)[1:]
        samples = SampleSet(ts, cell_widths(ts, 0.0, 2.0))
        out = volume_render(SlabEvaluator(1e6, x0=1.0), ray, samples)
        np.testing.assert_allclose(out.rgb, [0.6, 0.6, 0.6], atol=1e-6)
        assert out.alpha == pytest.approx(1.0)
        assert out.depth == pytest.approx(1.0, abs=0.01)

    def test_two_sample_hand_evaluation(self):
        ray = Ray([0, 0, 0], [1, 0, 0], 0.5, 2.5)
        out = volume_render(TwoColorEvaluator(), ray, SampleSet(np.array([1.0, 2.0]), np.array([1.0, 1.0])))
        np.testing.assert_allclose(out.rgb, [0.5, 0.25, 0.0])
        assert out.alpha == pytest.approx(0.75)

    @given(st.lists(st.floats(0.0, 50.0), min_size=2, max_size=30), st.floats(0.01, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_weights_are_a_partial_partition(self, sigmas, delta):
        sigma = np.asarray(sigmas)
        w, trans_next = accumulation_weights(sigma, np.full(sigma.shape, delta))
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0 - trans_next[-1], abs=1e-10)

    def test_unit_shading_matches_reflectance_map(self):
        fld = _random_field(seed=5)
        fld.shading[:] = 1.0
        cam = CameraModel.look_at([4.0, 0.5, 1.0], fld.center, 8, 8)
        gb = render_view(fld, cam, SamplerConfig(n_samples=32))
        np.testing.assert_allclose(gb.rgb, gb.reflectance, rtol=1e-12, atol=1e-15)


class TestRenderView:
    """Test per-pixel rendering and GBuffer files"""

    @pytest.fixture(scope="class")
    def sphere_field(self):
        return voxelize(sphere_scene(radius=0.5), (32, 32, 32))

    def test_empty_field_is_black(self):
        fld = IntrinsicField.empty([-1, -1, -1], [1, 1, 1], (4, 4, 4))
        gb = render_view(fld, CameraModel.look_at([3.0, 0, 0], [0, 0, 0], 6, 6), SamplerConfig(n_samples=8))
        np.testing.assert_array_equal(gb.rgb, 0.0)
        np.testing.assert_array_equal(gb.alpha, 0.0)
        np.testing.assert_array_equal(gb.depth, 0.0)

    def test_background_depth_stays_zero(self, sphere_field):
        cam = CameraModel.look_at([3.0, 0, 0], [0, 0, 0], 33, 33, 40.0)
        gb = render_view(sphere_field, cam, SamplerConfig(n_samples=64))
        for corner in (gb.depth[0, 0], gb.depth[0, -1], gb.depth[-1, 0], gb.depth[-1, -1]):
            assert corner == pytest.approx(0.0, abs=1e-9)
        assert gb.depth[16, 16] > 2.0

    def test_sphere_silhouette(self, sphere_field):
        cam = CameraModel.look_at([3.0, 0, 0], [0, 0, 0], 33, 33, 40.0)
        gb = render_view(sphere_field, cam, SamplerConfig(n_samples=96))
        assert gb.alpha[16, 16] > 0.95
        for corner in (gb.alpha[0, 0], gb.alpha[0, -1], gb.alpha[-1, 0], gb.alpha[-1, -1]):
            assert corner < 0.05
        assert gb.normal[16, 16] @ np.array([1.0, 0.0, 0.0]) > 0.9

    def test_sphere_normals_match_analytic(self):
        """Every foreground pixel off the one-pixel rim agrees with the exact sphere to 10 degrees"""
        fld = voxelize(sphere_scene(radius=0.5), (64, 64, 64))
        cam = CameraModel.look_at([3.0, 0.4, 0.6], [0, 0, 0], 33, 33, 40.0)
        gb = render_view(fld, cam, SamplerConfig(n_samples=128))
        exact = sphere_gbuffer(cam, radius=0.5)
        interior = ndimage.binary_erosion(exact.alpha > 0.5) & gb.foreground()
        assert interior.sum() > 100
        cos = (gb.normal[interior] * exact.normal[interior]).sum(axis=-1)
        assert cos.min() > np.cos(np.radians(10.0))

    def test_deterministic(self, sphere_field):
        cam = CameraModel.look_at([0.0, 3.0, 1.0], [0, 0, 0], 12, 10)
        config = SamplerConfig(n_samples=48, threads=2, chunk_size=16)
        a = render_view(sphere_field, cam, config)
        b = render_view(sphere_field, cam, config)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)
        single = render_view(sphere_field, cam, SamplerConfig(n_samples=48))
        np.testing.assert_allclose(single.rgb, a.rgb, rtol=1e-12, atol=1e-15)

    def test_gbuffer_files(self, sphere_field, tmp_path):
        cam = CameraModel.look_at([3.0, 0, 0], [0, 0, 0], 7, 5)
        gb = render_view(sphere_field, cam, SamplerConfig(n_samples=32))
        save_gbuffer(tmp_path / "view.pfm", gb)
        back = load_gbuffer(tmp_path / "view.pfm")
        assert isinstance(back, GBuffer)
        assert back.shape == (5, 7)
        np.testing.assert_allclose(back.depth, gb.depth, rtol=1e-6)
        np.testing.assert_allclose(back.normal, gb.normal, atol=1e-6)
        assert back.camera.width == 7
