"""
Spherical Gaussian lights: G(d) = a * exp(-(1 - d . mu) / v) with v = 0.005.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.lighting.envmap import LUMINANCE, EnvironmentMap, equirect_directions, equirect_solid_angles
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)

SG_VARIANCE = 0.005
DEFAULT_SUPPRESSION_DEG = 10.0


@dataclass
class SphericalGaussianLight:
    mean: np.ndarray
    amplitude: np.ndarray
    variance: float = SG_VARIANCE
    position: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64).reshape(3)
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=np.float64).reshape(3)

    def validate(self) -> None:
        if abs(np.linalg.norm(self.mean) - 1.0) > 1e-6:
            raise InvalidArgumentError("SG mean must be a unit vector")
        if np.any(self.amplitude < 0):
            raise InvalidArgumentError("SG amplitude must be non-negative")
        if self.variance <= 0:
            raise InvalidArgumentError("SG variance must be positive")

    def evaluate(self, directions: np.ndarray) -> np.ndarray:
        lobe = np.exp(-(1.0 - np.asarray(directions) @ self.mean) / self.variance)
        return lobe[..., None] * self.amplitude

    def energy(self) -> np.ndarray:
        """Closed-form integral over the sphere, per channel"""
        v = self.variance
        return self.amplitude * 2.0 * np.pi * v * (1.0 - np.exp(-2.0 / v))


@dataclass
class SGFitResult:
    sgs: List[SphericalGaussianLight] = field(default_factory=list)
    residual: EnvironmentMap = None


def sg_energy(sg: SphericalGaussianLight) -> np.ndarray:
    return sg.energy()


def sg_to_panorama(sgs: List[SphericalGaussianLight], width: int, height: int) -> EnvironmentMap:
    dirs = equirect_directions(height, width)
    radiance = np.zeros((height, width, 3))
    for sg in sgs:
        radiance += sg.evaluate(dirs)
    return EnvironmentMap(radiance)


def fit_sgs(env: EnvironmentMap, k: int = 3, rho_deg: float = DEFAULT_SUPPRESSION_DEG,
            variance: float = SG_VARIANCE) -> SGFitResult:
    """Greedy brightest-peak extraction.

    Each pick takes the residual's max-luminance pixel outside earlier picks'
    suppression cones. Its amplitude matches the residual energy within rho of
    the peak, raised where needed to cover the peak value itself; the SG is
    then subtracted with the residual clamped at 0.
    """
    if k < 0:
        raise InvalidArgumentError(f"k must be >= 0, got {k}")
    residual = env.radiance.copy()
    dirs = equirect_directions(env.height, env.width)
    domega = equirect_solid_angles(env.height, env.width)
    cos_rho = np.cos(np.radians(rho_deg))
    excluded = np.zeros(domega.shape, dtype=bool)
    sgs = []

    for _ in range(k):
        lum = np.where(excluded, -np.inf, residual @ LUMINANCE)
        peak = np.unravel_index(np.argmax(lum), lum.shape)
        if not lum[peak] > 0:
            break
        mean = dirs[peak]
        cos = dirs @ mean
        cone = cos >= cos_rho

        lobe = np.exp(-(1.0 - cos) / variance)
        cone_energy = np.einsum("hwc,hw->c", residual * cone[..., None], domega)
        projection = (lobe * domega).sum()
        amplitude = np.maximum(cone_energy / projection, residual[peak])

        residual = np.maximum(residual - lobe[..., None] * amplitude, 0.0)
        excluded |= cone
        sgs.append(SphericalGaussianLight(mean, amplitude, variance))
        logger.debug(f"  SG {len(sgs)}: dir {np.round(mean, 3)} amplitude {np.round(amplitude, 3)}")

    return SGFitResult(sgs, EnvironmentMap(residual))
