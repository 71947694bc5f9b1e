"""
Unit tests for deferred relighting: SH diffuse and specular, SG point lights and final compositing
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.cli.synthetic import sphere_gbuffer
from src.field_core.camera import CameraModel
from src.lighting.hybrid import HybridLighting
from src.lighting.sg import SphericalGaussianLight
from src.lighting.sh import SHLighting, rotate_sh, sh_basis_unchecked
from src.renderer.deferred import (MaterialMap, compose_final, compose_final_multi, load_material,
                                   render_diffuse_sh, render_relit, render_specular_sh, save_material,
                                   sh_irradiance, tonemap)
from src.renderer.point_lights import FalloffConfig, PointLightSet, render_sg_shading, sg_to_point_lights
from src.reporting.metrics import highlight_area
from src.utils.errors import InvalidArgumentError


@pytest.fixture
def sphere_view():
    cam = CameraModel.look_at([0.0, -0.4, 3.0], [0.0, 0.0, 0.0], 48, 48, fov_y_deg=30.0)
    return sphere_gbuffer(cam, radius=0.5, reflectance=(0.8, 0.5, 0.3))


def _random_sh(seed=0, dc=2.0, spread=0.1):
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(-spread, spread, (9, 3))
    coeffs[0] = dc
    return SHLighting(coeffs)


def _unit_vectors(n, seed):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _fibonacci(n):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _hybrid(seed=0):
    return HybridLighting(_random_sh(seed), [
        SphericalGaussianLight(np.array([0.0, 0.6, 0.8]), [2.0, 2.0, 1.5]),
        SphericalGaussianLight(np.array([0.8, 0.0, 0.6]), [1.0, 0.5, 0.5]),
    ])


class TestDiffuseSH:
    """Test SH irradiance against numerical integration"""

    def test_constant_light_gives_pi(self):
        coeffs = np.zeros((9, 3))
        coeffs[0] = 0.282095 * 4.0 * np.pi
        irradiance = sh_irradiance(_unit_vectors(20, 1), SHLighting(coeffs))
        assert np.allclose(irradiance, np.pi, rtol=1e-4)

    def test_matches_numerical_hemisphere_integral(self):
        sh = _random_sh(seed=2)
        normals = _unit_vectors(1000, 3)
        omega = _fibonacci(20000)
        radiance = sh_basis_unchecked(omega) @ sh.coeffs
        expected = np.concatenate([
            (4.0 * np.pi / len(omega)) * np.maximum(chunk @ omega.T, 0.0) @ radiance
            for chunk in np.array_split(normals, 10)])
        got = sh_irradiance(normals, sh)
        relative = np.abs(got - expected) / np.abs(expected)
        assert relative.mean() < 0.02

    def test_rotation_equivariance(self):
        sh = _random_sh(seed=4, spread=0.4)
        normals = _unit_vectors(200, 5)
        rotation = Rotation.random(random_state=11).as_matrix()
        rotated = sh_irradiance(normals @ rotation.T, rotate_sh(sh, rotation))
        assert np.allclose(rotated, sh_irradiance(normals, sh), atol=1e-4)

    def test_diffuse_is_reflectance_times_irradiance(self, sphere_view):
        sh = _random_sh(seed=6)
        image = render_diffuse_sh(sphere_view, sh)
        fg = sphere_view.foreground()
        expected = sphere_view.reflectance[fg] * sh_irradiance(sphere_view.normal[fg], sh)
        assert np.allclose(image[fg], expected)
        assert np.all(image[~fg] == 0.0)


class TestSpecularSH:
    """Test the glossy SH term"""

    def test_zero_specular_gives_zero(self, sphere_view):
        material = MaterialMap.constant(sphere_view.shape, specular=0.0, glossiness=8.0)
        assert np.all(render_specular_sh(sphere_view, _random_sh(), material) == 0.0)

    def test_highlight_shrinks_with_glossiness(self):
        cam = CameraModel.look_at([0.0, 0.0, 3.0], [0.0, 0.0, 0.0], 64, 64, fov_y_deg=25.0)
        gbuffer = sphere_gbuffer(cam, radius=0.5)
        coeffs = np.zeros((9, 3))
        coeffs[2] = 1.0
        areas = []
        for alpha in (1.0, 8.0, 32.0):
            material = MaterialMap.constant(gbuffer.shape, specular=1.0, glossiness=alpha)
            areas.append(highlight_area(render_specular_sh(gbuffer, SHLighting(coeffs), material)))
        assert areas[0] > areas[1] > areas[2] > 0

    def test_material_validation(self, sphere_view):
        with pytest.raises(InvalidArgumentError):
            MaterialMap.constant(sphere_view.shape, glossiness=0.5).validate()
        with pytest.raises(InvalidArgumentError):
            MaterialMap.constant((4, 4)).validate(sphere_view.shape)

    def test_material_file_round_trip(self, tmp_path):
        material = MaterialMap(np.full((5, 7), 0.25), np.full((5, 7), 16.0))
        save_material(tmp_path / "mat.pfm", material)
        loaded = load_material(tmp_path / "mat.pfm")
        assert np.array_equal(loaded.specular, material.specular)
        assert np.array_equal(loaded.glossiness, material.glossiness)


class TestPointLights:
    """Test SG to point-light conversion and point-light shading"""

    def test_first_light_at_centre_and_energy_preserved(self):
        sg = SphericalGaussianLight(np.array([0.0, 0.6, 0.8]), [1.0, 2.0, 3.0])
        lights = sg_to_point_lights(sg, n=5, seed=3)
        assert len(lights) == 5
        assert np.allclose(lights.vectors[0], sg.mean)
        assert np.allclose(lights.intensities.sum(axis=0), sg.energy(), rtol=1e-6)
        assert np.allclose(np.linalg.norm(lights.vectors, axis=1), 1.0)

    def test_seeded(self):
        sg = SphericalGaussianLight(np.array([1.0, 0.0, 0.0]), [1.0, 1.0, 1.0])
        a, b = sg_to_point_lights(sg, seed=9), sg_to_point_lights(sg, seed=9)
        assert np.array_equal(a.vectors, b.vectors)

    def test_positional_lights(self):
        sg = SphericalGaussianLight(np.array([0.0, 0.0, 1.0]), [1.0, 1.0, 1.0], position=[0.0, 0.0, 4.0])
        lights = sg_to_point_lights(sg, n=3)
        assert lights.positional
        assert np.array_equal(lights.vectors[0], [0.0, 0.0, 4.0])

    def test_needs_one_light(self):
        sg = SphericalGaussianLight(np.array([1.0, 0.0, 0.0]), [1.0, 1.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            sg_to_point_lights(sg, n=0)

    def test_distant_light_is_clamped_cosine(self, sphere_view):
        lights = PointLightSet([[0.0, 0.0, 1.0]], [[1.0, 1.0, 1.0]])
        shading = render_sg_shading(sphere_view, lights)
        fg = sphere_view.foreground()
        assert np.allclose(shading[fg][:, 0], np.maximum(sphere_view.normal[fg][:, 2], 0.0))
        assert np.all(shading[~fg] == 0.0)

    def test_homogeneous_in_intensity(self, sphere_view):
        lights = sg_to_point_lights(SphericalGaussianLight(np.array([0.0, 0.6, 0.8]), [1.0, 1.0, 1.0]))
        base = render_sg_shading(sphere_view, lights)
        assert np.allclose(render_sg_shading(sphere_view, lights.scaled(2.5)), 2.5 * base)

    def test_falloff_gamma_scales(self, sphere_view):
        lights = PointLightSet([[0.0, 0.0, 4.0]], [[1.0, 1.0, 1.0]], positional=True)
        base = render_sg_shading(sphere_view, lights)
        halved = render_sg_shading(sphere_view, lights, FalloffConfig(gamma=2.0))
        assert np.allclose(halved, 0.5 * base)

    def test_light_on_surface_is_clamped_with_warning(self, sphere_view):
        point = sphere_view.surface_points()[24, 24]
        lights = PointLightSet([point], [[1.0, 1.0, 1.0]], positional=True)
        warnings = []
        shading = render_sg_shading(sphere_view, lights, warnings=warnings)
        assert warnings
        assert np.all(np.isfinite(shading))

    def test_bad_falloff_rejected(self, sphere_view):
        lights = PointLightSet([[0.0, 0.0, 1.0]], [[1.0, 1.0, 1.0]])
        with pytest.raises(InvalidArgumentError):
            render_sg_shading(sphere_view, lights, FalloffConfig(gamma=0.0))


class TestComposition:
    """Test final compositing and full relighting"""

    def test_compose_final_formula(self):
        rng = np.random.default_rng(0)
        d, s, r, sg = (rng.random((6, 5, 3)) for _ in range(4))
        v = rng.random((6, 5))
        image = compose_final(d, s, v, r, sg)
        assert np.array_equal(image, d + s + v[..., None] * r * sg)

    def test_compose_final_without_specular_or_shadow(self):
        rng = np.random.default_rng(1)
        d, r, sg = (rng.random((4, 4, 3)) for _ in range(3))
        image = compose_final(d, np.zeros_like(d), np.ones((4, 4)), r, sg)
        assert np.array_equal(image, d + r * sg)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            compose_final(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.ones((3, 4)),
                          np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))

    def test_multi_needs_matching_layers(self):
        z = np.zeros((2, 2, 3))
        with pytest.raises(InvalidArgumentError):
            compose_final_multi(z, z, [np.ones((2, 2))], z, [])

    def test_lighting_is_additive(self, sphere_view):
        lighting = _hybrid()
        material = MaterialMap.constant(sphere_view.shape, specular=0.3, glossiness=4.0)
        full = render_relit(sphere_view, lighting, material).image
        sh_part = render_relit(sphere_view, lighting.sh_only(), material).image
        sg_part = render_relit(sphere_view, lighting.sg_only(), material).image
        assert np.allclose(full, sh_part + sg_part, atol=1e-12)

    def test_visibility_masks_sg_layer_only(self, sphere_view):
        lighting = _hybrid()
        lit = render_relit(sphere_view, lighting)
        dark = render_relit(sphere_view, lighting, visibilities=[np.zeros(sphere_view.shape)] * 2)
        assert np.allclose(dark.image, lit.diffuse + lit.specular)
        assert len(lit.sg_shading) == 2

    def test_positional_sg_reports_no_warning_when_far(self, sphere_view):
        lighting = HybridLighting(SHLighting.zeros(), [
            SphericalGaussianLight(np.array([0.0, 0.0, 1.0]), [1.0, 1.0, 1.0], position=[0.0, 0.0, 5.0])])
        result = render_relit(sphere_view, lighting)
        assert result.warnings == []
        assert result.image.max() > 0.0


class TestTonemap:
    """Test the display transform"""

    def test_mid_grey(self):
        assert tonemap(np.array([0.5]))[0] == 186

    def test_clamping_and_dtype(self):
        out = tonemap(np.array([-1.0, 0.0, 1.0, 7.0]))
        assert out.dtype == np.uint8
        assert list(out) == [0, 0, 255, 255]

    def test_exposure(self):
        assert tonemap(np.array([0.25]), exposure=4.0)[0] == 255


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
