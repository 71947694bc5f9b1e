"""
SG lights as small clusters of point lights, and their shading with distance falloff.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from src.field_core.rendering import GBuffer
from src.lighting.sg import SphericalGaussianLight
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)

MIN_DISTANCE = 1e-6
SATELLITE_CLIP = 3.0


@dataclass
class PointLightSet:
    """Distant lights store unit directions toward the light; positional ones store world positions"""

    vectors: np.ndarray
    intensities: np.ndarray
    positional: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 3)
        self.intensities = np.asarray(self.intensities, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.vectors)

    def validate(self) -> None:
        if len(self.vectors) != len(self.intensities):
            raise InvalidArgumentError("light vectors and intensities disagree in count")
        if np.any(self.intensities < 0):
            raise InvalidArgumentError("light intensities must be non-negative")
        if not self.positional and np.any(np.abs(np.linalg.norm(self.vectors, axis=1) - 1.0) > 1e-6):
            raise InvalidArgumentError("distant lights need unit directions")

    def scaled(self, factor: float) -> "PointLightSet":
        return PointLightSet(self.vectors, self.intensities * factor, self.positional)


@dataclass
class FalloffConfig:
    gamma: float = 1.0

    def validate(self) -> None:
        if self.gamma <= 0:
            raise InvalidArgumentError(f"falloff gamma must be > 0, got {self.gamma}")


def tangent_frame(normal: np.ndarray):
    """Two unit vectors orthogonal to `normal` and to each other"""
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(normal, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(normal, t1)


def sg_to_point_lights(sg: SphericalGaussianLight, n: int = 5, seed: int = 0,
                       spread: float = 1.0) -> PointLightSet:
    """Light 0 at the SG centre; the rest at seeded Gaussian offsets (std sqrt(v), clipped
    to 3 std) in the tangent plane. Intensities follow the SG lobe and sum to its energy."""
    if n < 1:
        raise InvalidArgumentError(f"need at least one point light, got {n}")
    sigma = np.sqrt(sg.variance)
    offsets = np.random.default_rng(seed).normal(0.0, sigma, (n - 1, 2))
    length = np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= np.minimum(1.0, SATELLITE_CLIP * sigma / np.maximum(length, 1e-12))

    t1, t2 = tangent_frame(sg.mean)
    dirs = sg.mean + offsets[:, :1] * t1 + offsets[:, 1:] * t2
    dirs = np.vstack([sg.mean, dirs / np.linalg.norm(dirs, axis=1, keepdims=True)])

    lobe = np.exp(-(1.0 - dirs @ sg.mean) / sg.variance)
    intensities = (lobe / lobe.sum())[:, None] * sg.energy()[None, :]
    if sg.position is None:
        return PointLightSet(dirs, intensities, positional=False)
    positions = sg.position + spread * (dirs - sg.mean)
    return PointLightSet(positions, intensities, positional=True)


def render_sg_shading(gbuffer: GBuffer, lights: PointLightSet, falloff: FalloffConfig = None,
                      camera=None, warnings: List[str] = None) -> np.ndarray:
    """sum_i max(0, cos(N, L_i)) I_i / (gamma Dis_i^2) per pixel, shape (H, W, 3).

    Distant lights use Dis = 1; positional ones use the distance to the
    back-projected surface point (clamped at 1e-6 with a warning).
    """
    falloff = falloff or FalloffConfig()
    falloff.validate()
    lights.validate()
    if camera is not None and camera is not gbuffer.camera:
        gbuffer = GBuffer(gbuffer.rgb, gbuffer.depth, gbuffer.normal, gbuffer.reflectance,
                          gbuffer.shading, gbuffer.alpha, camera)
    fg = gbuffer.foreground()
    normals = gbuffer.normal
    out = np.zeros(gbuffer.shape + (3,))
    points = gbuffer.surface_points() if lights.positional else None
    clamped = 0

    for vector, intensity in zip(lights.vectors, lights.intensities):
        if lights.positional:
            to_light = vector - points
            dist = np.linalg.norm(to_light, axis=-1)
            near = fg & (dist < MIN_DISTANCE)
            clamped += int(near.sum())
            dist = np.maximum(dist, MIN_DISTANCE)
            cos = (normals * to_light).sum(axis=-1) / dist
        else:
            dist = np.ones(gbuffer.shape)
            cos = normals @ vector
        term = np.maximum(cos, 0.0) / (falloff.gamma * dist ** 2)
        out += np.where(fg, term, 0.0)[..., None] * intensity

    if clamped:
        message = f"{clamped} pixel-light distances below {MIN_DISTANCE} were clamped"
        logger.warning(f"⚠ {message}")
        if warnings is not None:
            warnings.append(message)
    return out
