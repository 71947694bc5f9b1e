"""
Equirectangular environment maps.

Pixel (i, j) of an H x W map looks along theta = (i + 0.5) pi / H (polar angle
from +z) and phi = (j + 0.5) 2 pi / W, i.e. d = (sin t cos p, sin t sin p, cos t).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.utils.errors import InvalidArgumentError
from src.utils.image_io import read_pfm, read_rgbe, write_pfm, write_rgbe
from src.utils.logger import get_logger

logger = get_logger(__name__)

LUMINANCE = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class EnvironmentMap:
    radiance: np.ndarray

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    def validate(self) -> None:
        if self.radiance.ndim != 3 or self.radiance.shape[2] != 3:
            raise InvalidArgumentError(f"environment map must be (H, W, 3), got {self.radiance.shape}")
        if self.width != 2 * self.height:
            raise InvalidArgumentError(f"environment map width must be 2 x height, got {self.width}x{self.height}")
        if np.any(self.radiance < 0) or not np.all(np.isfinite(self.radiance)):
            raise InvalidArgumentError("environment radiance must be finite and non-negative")

    @classmethod
    def constant(cls, height: int, value=1.0) -> "EnvironmentMap":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, 2 * height, 3)).copy())

    def angles(self):
        return equirect_angles(self.height, self.width)

    def directions(self) -> np.ndarray:
        return equirect_directions(self.height, self.width)

    def solid_angles(self) -> np.ndarray:
        return equirect_solid_angles(self.height, self.width)

    def luminance(self) -> np.ndarray:
        return self.radiance @ LUMINANCE

    def energy(self) -> np.ndarray:
        """Solid-angle-weighted integral per channel"""
        return np.einsum("hwc,hw->c", self.radiance, self.solid_angles())


def equirect_angles(height: int, width: int):
    theta = (np.arange(height) + 0.5) * np.pi / height
    phi = (np.arange(width) + 0.5) * 2.0 * np.pi / width
    return np.meshgrid(theta, phi, indexing="ij")


def equirect_directions(height: int, width: int) -> np.ndarray:
    theta, phi = equirect_angles(height, width)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def equirect_solid_angles(height: int, width: int) -> np.ndarray:
    theta, _ = equirect_angles(height, width)
    return (2.0 * np.pi / width) * (np.pi / height) * np.sin(theta)


def direction_to_pixel(direction, height: int, width: int):
    """(row, col) of the pixel containing a unit direction"""
    d = np.asarray(direction, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * np.pi)
    row = np.clip((theta / np.pi * height).astype(int), 0, height - 1)
    col = np.clip((phi / (2.0 * np.pi) * width).astype(int), 0, width - 1)
    return row, col


def load_envmap(path) -> EnvironmentMap:
    """Decode a PFM or Radiance .hdr panorama into linear radiance"""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        image = read_pfm(path)
    elif suffix in (".hdr", ".rgbe", ".pic"):
        image = read_rgbe(path)
    else:
        raise InvalidArgumentError(f"unsupported environment map type '{suffix}'")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    env = EnvironmentMap(image)
    logger.debug(f"✓ Loaded {env.width}x{env.height} environment map from {path}")
    return env


def save_envmap(path, env: EnvironmentMap) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, env.radiance)
    elif suffix in (".hdr", ".rgbe", ".pic"):
        write_rgbe(path, env.radiance)
    else:
        raise InvalidArgumentError(f"unsupported environment map type '{suffix}'")
