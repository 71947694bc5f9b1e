"""
Real spherical harmonics up to degree 2 (9 coefficients per colour channel).

Basis order: Y00, Y1-1 (y), Y10 (z), Y11 (x), Y2-2 (xy), Y2-1 (yz), Y20, Y21 (xz), Y22.
"""

from dataclasses import dataclass

import numpy as np

from src.lighting.envmap import EnvironmentMap, equirect_directions, equirect_solid_angles
from src.utils.errors import InvalidArgumentError

SH_COUNT = 9
UNIT_TOL = 1e-6


@dataclass
class SHLighting:
    """Coefficients C_{l,m} per channel, shape (9, 3)"""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(SH_COUNT, 3)

    @classmethod
    def zeros(cls) -> "SHLighting":
        return cls(np.zeros((SH_COUNT, 3)))

    def validate(self) -> None:
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidArgumentError("SH coefficients must be finite")

    def evaluate(self, directions: np.ndarray) -> np.ndarray:
        return sh_basis_unchecked(directions) @ self.coeffs


def sh_basis_unchecked(directions: np.ndarray) -> np.ndarray:
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, 0.282095),
        0.488603 * y,
        0.488603 * z,
        0.488603 * x,
        1.092548 * x * y,
        1.092548 * y * z,
        0.315392 * (3.0 * z * z - 1.0),
        1.092548 * x * z,
        0.546274 * (x * x - y * y),
    ], axis=-1)


def sh_basis(direction) -> np.ndarray:
    """The 9 basis values for unit direction(s); non-unit input is rejected"""
    d = np.asarray(direction, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > UNIT_TOL):
        raise InvalidArgumentError("sh_basis needs unit directions")
    return sh_basis_unchecked(d)


def fit_sh(env: EnvironmentMap) -> SHLighting:
    """Project the panorama onto the basis with per-pixel solid angles"""
    basis = sh_basis_unchecked(equirect_directions(env.height, env.width))
    weights = equirect_solid_angles(env.height, env.width)
    return SHLighting(np.einsum("hwk,hwc,hw->kc", basis, env.radiance, weights))


def sh_to_panorama(sh: SHLighting, width: int, height: int) -> EnvironmentMap:
    """Reconstruction sum_k C_k Y_k(d), clamped at 0"""
    values = sh.evaluate(equirect_directions(height, width))
    return EnvironmentMap(np.maximum(values, 0.0))


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def rotate_sh(sh: SHLighting, rotation: np.ndarray) -> SHLighting:
    """Coefficients of the lighting rotated by `rotation`, L'(d) = L(R^T d).

    The 9x9 transform is recovered by least squares on a fixed point set; it is
    exact for degree <= 2 because each band is closed under rotation.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    points = _fibonacci_sphere(64)
    target = sh_basis_unchecked(points @ rotation)      # rows: Y(R^T d)
    basis = sh_basis_unchecked(points)
    transform, *_ = np.linalg.lstsq(basis, target, rcond=None)
    return SHLighting(transform @ sh.coeffs)
