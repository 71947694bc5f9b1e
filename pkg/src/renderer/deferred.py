"""
Deferred relighting of GBuffers under hybrid SH + SG lighting.

    I = I_d + I_s + sum_i V_i R S_SG,i
with I_d the SH irradiance times reflectance, I_s the SH specular lobe at the
reflection direction and S_SG,i the point-light shading of SG i.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.field_core.rendering import GBuffer
from src.lighting.hybrid import HybridLighting
from src.lighting.sh import SHLighting, sh_basis_unchecked
from src.renderer.point_lights import FalloffConfig, render_sg_shading, sg_to_point_lights
from src.utils.errors import ConfigError, InvalidArgumentError
from src.utils.image_io import read_pfm, write_pfm
from src.utils.logger import get_logger

logger = get_logger(__name__)

# clamped-cosine convolution per band, expanded to the 9 coefficients
BAND_ATTENUATION = np.array([np.pi] + [2.0 * np.pi / 3.0] * 3 + [np.pi / 4.0] * 5)


@dataclass
class MaterialMap:
    """Per-pixel specular reflectance s_p >= 0 and glossiness exponent alpha >= 1"""

    specular: np.ndarray
    glossiness: np.ndarray

    def validate(self, shape=None) -> None:
        if self.specular.shape != self.glossiness.shape:
            raise InvalidArgumentError("material maps disagree in shape")
        if shape is not None and self.specular.shape != tuple(shape):
            raise InvalidArgumentError(f"material map {self.specular.shape} does not match image {tuple(shape)}")
        if np.any(self.specular < 0):
            raise InvalidArgumentError("specular reflectance must be >= 0")
        if np.any(self.glossiness < 1):
            raise InvalidArgumentError("glossiness exponent must be >= 1")

    @classmethod
    def constant(cls, shape, specular: float = 0.0, glossiness: float = 1.0) -> "MaterialMap":
        return cls(np.full(shape, float(specular)), np.full(shape, float(glossiness)))


def load_material(path) -> MaterialMap:
    """3-channel PFM: s_p in channel 0, alpha in channel 1"""
    data = read_pfm(path).astype(np.float64)
    if data.shape[2] < 2:
        raise ConfigError(f"material map {path} needs at least 2 channels")
    return MaterialMap(data[..., 0], data[..., 1])


def save_material(path, material: MaterialMap) -> None:
    data = np.stack([material.specular, material.glossiness, np.zeros_like(material.specular)], axis=-1)
    write_pfm(path, data)


def _mask(gbuffer: GBuffer, image: np.ndarray) -> np.ndarray:
    return np.where(gbuffer.foreground()[..., None], image, 0.0)


def sh_irradiance(normals: np.ndarray, sh: SHLighting) -> np.ndarray:
    """sum_k A_k C_k Y_k(N), clamped at 0"""
    basis = sh_basis_unchecked(normals) * BAND_ATTENUATION
    return np.maximum(basis @ sh.coeffs, 0.0)


def render_diffuse_sh(gbuffer: GBuffer, sh: SHLighting) -> np.ndarray:
    return _mask(gbuffer, gbuffer.reflectance * sh_irradiance(gbuffer.normal, sh))


def reflection_directions(gbuffer: GBuffer, camera=None) -> np.ndarray:
    """R_v = 2 (N.v) N - v with v pointing from the surface to the camera"""
    cam = camera or gbuffer.camera
    view = -cam.pixel_directions().reshape(gbuffer.shape + (3,))
    n_dot_v = (gbuffer.normal * view).sum(axis=-1, keepdims=True)
    return 2.0 * n_dot_v * gbuffer.normal - view


def render_specular_sh(gbuffer: GBuffer, sh: SHLighting, material: MaterialMap, camera=None) -> np.ndarray:
    """s_p sum_k C_k max(0, A_k Y_k(R_v))^alpha per pixel"""
    material.validate(gbuffer.shape)
    lobes = np.maximum(sh_basis_unchecked(reflection_directions(gbuffer, camera)) * BAND_ATTENUATION, 0.0)
    lobes = lobes ** material.glossiness[..., None]
    return _mask(gbuffer, material.specular[..., None] * (lobes @ sh.coeffs))


def _check_shapes(*maps) -> None:
    shape = maps[0].shape[:2]
    for m in maps[1:]:
        if m.shape[:2] != shape:
            raise InvalidArgumentError(f"map shape {m.shape[:2]} does not match {shape}")


def _as_column(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[..., None] if v.ndim == 2 else v


def compose_final(diffuse, specular, visibility, reflectance, sg_shading) -> np.ndarray:
    """I_d + I_s + V R S_SG"""
    _check_shapes(diffuse, specular, visibility, reflectance, sg_shading)
    return diffuse + specular + _as_column(visibility) * reflectance * _as_column(sg_shading)


def compose_final_multi(diffuse, specular, visibilities: Sequence[np.ndarray], reflectance,
                        sg_shadings: Sequence[np.ndarray]) -> np.ndarray:
    """I_d + I_s + sum_i V_i R S_SG,i with one visibility map per SG"""
    if len(visibilities) != len(sg_shadings):
        raise InvalidArgumentError("need one visibility map per SG shading layer")
    _check_shapes(diffuse, specular, reflectance, *visibilities, *sg_shadings)
    out = diffuse + specular
    for v, s in zip(visibilities, sg_shadings):
        out = out + _as_column(v) * reflectance * _as_column(s)
    return out


def tonemap(image: np.ndarray, exposure: float = 1.0, gamma: float = 2.2) -> np.ndarray:
    """round(255 * clamp(linear * exposure)^(1/gamma)) as uint8"""
    scaled = np.clip(np.asarray(image, dtype=np.float64) * exposure, 0.0, 1.0)
    return np.round(255.0 * scaled ** (1.0 / gamma)).astype(np.uint8)


@dataclass
class RelightResult:
    image: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    sg_shading: List[np.ndarray]
    visibilities: List[np.ndarray]
    warnings: List[str] = field(default_factory=list)


def render_relit(gbuffer: GBuffer, lighting: HybridLighting, material: Optional[MaterialMap] = None,
                 camera=None, visibilities: Optional[Sequence[np.ndarray]] = None,
                 falloff: FalloffConfig = None, n_point_lights: int = 5, seed: int = 0,
                 spread: float = 1.0) -> RelightResult:
    """Full relight; SGs carrying a position are shaded with inverse-square falloff"""
    lighting.validate()
    material = material or MaterialMap.constant(gbuffer.shape)
    diffuse = render_diffuse_sh(gbuffer, lighting.sh)
    specular = render_specular_sh(gbuffer, lighting.sh, material, camera)

    warnings = []
    layers = []
    for i, sg in enumerate(lighting.sgs):
        lights = sg_to_point_lights(sg, n_point_lights, seed + i, spread)
        layers.append(render_sg_shading(gbuffer, lights, falloff, camera, warnings))

    if visibilities is None:
        visibilities = [np.ones(gbuffer.shape) for _ in layers]
    visibilities = list(visibilities)
    image = compose_final_multi(diffuse, specular, visibilities, gbuffer.reflectance, layers)
    logger.debug(f"✓ Relit {gbuffer.shape[1]}x{gbuffer.shape[0]} view with {len(layers)} SG layers")
    return RelightResult(image, diffuse, specular, layers, visibilities, warnings)
