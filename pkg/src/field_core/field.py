"""
Intrinsic radiance field on trilinear voxel grids.

Grid node (i, j, k) sits at bbox_min + (i, j, k) * spacing with
spacing = (bbox_max - bbox_min) / (resolution - 1). Values are interpolated
trilinearly inside the closed box and are zero outside it.
"""

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Tuple

import numpy as np

from src.utils.errors import InvalidArgumentError, ParseError
from src.utils.logger import get_logger

logger = get_logger(__name__)

IRCF_MAGIC = b"IRCF"
IRCF_VERSION = 1
IRCF_HEADER_SIZE = 64
_HEADER_STRUCT = struct.Struct("<4sI6f3I")

# corner offsets of a trilinear cell, in (dx, dy, dz) order
_CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])


class FieldEvaluator(Protocol):
    """Anything volume_render can march through"""

    def evaluate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (sigma, reflectance, shading) at (..., 3) points"""

    def density_at(self, points: np.ndarray) -> np.ndarray:
        """Return sigma alone at (..., 3) points"""

    def density_gradient(self, points: np.ndarray) -> np.ndarray:
        """Return the central-difference density gradient at (..., 3) points"""


@dataclass
class IntrinsicField:
    """Density, reflectance and shading grids over a world-space box"""

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density: np.ndarray
    reflectance: np.ndarray
    shading: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        self._gradient_cache = None

    @property
    def resolution(self) -> Tuple[int, int, int]:
        return tuple(self.density.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (np.asarray(self.resolution) - 1)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)

    def validate(self) -> None:
        res = self.resolution
        if self.density.ndim != 3 or min(res) < 2:
            raise InvalidArgumentError(f"resolution must be >= 2 per axis, got {res}")
        if self.reflectance.shape != res + (3,) or self.shading.shape != res:
            raise InvalidArgumentError("density, reflectance and shading grids disagree in shape")
        if np.any(self.bbox_min >= self.bbox_max):
            raise InvalidArgumentError("bbox_min must be < bbox_max componentwise")
        if np.any(self.density < 0) or np.any(self.shading < 0):
            raise InvalidArgumentError("density and shading must be non-negative")
        if np.any(self.reflectance < 0) or np.any(self.reflectance > 1):
            raise InvalidArgumentError("reflectance must lie in [0, 1]")

    @classmethod
    def empty(cls, bbox_min, bbox_max, resolution) -> "IntrinsicField":
        res = tuple(int(r) for r in resolution)
        return cls(bbox_min, bbox_max, np.zeros(res), np.zeros(res + (3,)), np.zeros(res))

    def node_positions(self) -> np.ndarray:
        """World positions of all grid nodes, shape (nx, ny, nz, 3)"""
        axes = [self.bbox_min[a] + np.arange(n) * self.spacing[a] for a, n in enumerate(self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def with_shading(self, shading: np.ndarray) -> "IntrinsicField":
        return replace(self, shading=np.asarray(shading, dtype=np.float64))

    def density_gradient_grid(self) -> np.ndarray:
        """Central differences (one-sided at the borders), shape (nx, ny, nz, 3)"""
        if self._gradient_cache is None:
            self._gradient_cache = central_gradient(self.density, self.spacing)
        return self._gradient_cache

    def evaluate(self, points: np.ndarray):
        return sample_field(self, points)

    def density_at(self, points: np.ndarray) -> np.ndarray:
        corners, w = trilinear_stencil(self.bbox_min, self.spacing, self.resolution, points)
        return (w * self.density.reshape(-1)[corners]).sum(axis=-1)

    def density_gradient(self, points: np.ndarray) -> np.ndarray:
        corners, weights = trilinear_stencil(self.bbox_min, self.spacing, self.resolution, points)
        grid = self.density_gradient_grid().reshape(-1, 3)
        return np.einsum("...c,...cd->...d", weights, grid[corners])


def trilinear_stencil(bbox_min, spacing, resolution, points: np.ndarray):
    """Flat corner indices (..., 8) and weights (..., 8); weights are 0 outside the box"""
    points = np.asarray(points, dtype=np.float64)
    res = np.asarray(resolution)
    u = (points - bbox_min) / spacing
    inside = np.all((u >= 0.0) & (u <= res - 1), axis=-1)

    base = np.clip(np.floor(u), 0, res - 2).astype(np.int64)
    frac = np.clip(u - base, 0.0, 1.0)

    idx = base[..., None, :] + _CORNERS                      # (..., 8, 3)
    flat = (idx[..., 0] * res[1] + idx[..., 1]) * res[2] + idx[..., 2]
    w = np.where(_CORNERS, frac[..., None, :], 1.0 - frac[..., None, :]).prod(axis=-1)
    w = w * inside[..., None]
    return flat, w


def sample_field(field: IntrinsicField, points: np.ndarray):
    """Trilinear (sigma, reflectance, shading) at world points; zeros outside the box"""
    corners, w = trilinear_stencil(field.bbox_min, field.spacing, field.resolution, points)
    sigma = (w * field.density.reshape(-1)[corners]).sum(axis=-1)
    refl = np.einsum("...c,...cd->...d", w, field.reflectance.reshape(-1, 3)[corners])
    shade = (w * field.shading.reshape(-1)[corners]).sum(axis=-1)
    return sigma, refl, shade


def scatter_to_grid(corners: np.ndarray, weights: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    """Adjoint of trilinear sampling: accumulate per-point values onto flat grid nodes.

    values is (N,) or (N, C); np.bincount sums in input order, so the
    reduction is deterministic.
    """
    corners = corners.reshape(-1, 8)
    weights = weights.reshape(-1, 8)
    values = np.asarray(values).reshape(corners.shape[0], -1)
    out = np.empty((size, values.shape[1]))
    for ch in range(values.shape[1]):
        out[:, ch] = np.bincount(corners.ravel(), (weights * values[:, ch:ch + 1]).ravel(), minlength=size)
    return out[:, 0] if out.shape[1] == 1 else out


def central_gradient(grid: np.ndarray, spacing) -> np.ndarray:
    """np.gradient with first-order edges, stacked on the last axis"""
    return np.stack(np.gradient(grid, *spacing, edge_order=1), axis=-1)


def central_gradient_adjoint(upstream: np.ndarray, spacing) -> np.ndarray:
    """Transpose of central_gradient: maps (nx, ny, nz, 3) back to (nx, ny, nz)"""
    out = np.zeros(upstream.shape[:-1])
    for axis in range(3):
        a = np.moveaxis(upstream[..., axis], axis, 0)
        o = np.moveaxis(out, axis, 0)
        h = spacing[axis]
        # interior: g[i] = (d[i+1] - d[i-1]) / 2h
        o[2:] += a[1:-1] / (2 * h)
        o[:-2] -= a[1:-1] / (2 * h)
        # borders: g[0] = (d[1] - d[0]) / h, g[-1] = (d[-1] - d[-2]) / h
        o[1] += a[0] / h
        o[0] -= a[0] / h
        o[-1] += a[-1] / h
        o[-2] -= a[-1] / h
    return out


# =============================================================================
# Serialization

def save_field(path, field: IntrinsicField) -> None:
    """Write the IRCF container: 64-byte header then sigma, RGB-interleaved R, S (x fastest)"""
    nx, ny, nz = field.resolution
    header = _HEADER_STRUCT.pack(IRCF_MAGIC, IRCF_VERSION,
                                 *field.bbox_min.astype(np.float32),
                                 *field.bbox_max.astype(np.float32),
                                 nx, ny, nz)
    header = header.ljust(IRCF_HEADER_SIZE, b"\0")

    density = np.asarray(field.density).transpose(2, 1, 0).astype("<f4")
    refl = np.asarray(field.reflectance).transpose(2, 1, 0, 3).astype("<f4")
    shading = np.asarray(field.shading).transpose(2, 1, 0).astype("<f4")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(density.tobytes())
        f.write(refl.tobytes())
        f.write(shading.tobytes())
    logger.debug(f"✓ Saved field {field.resolution} to {path}")


def load_field(path) -> IntrinsicField:
    data = Path(path).read_bytes()
    if len(data) < IRCF_HEADER_SIZE:
        raise ParseError("file shorter than the IRCF header", len(data))
    magic, version, *rest = _HEADER_STRUCT.unpack_from(data, 0)
    if magic != IRCF_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != IRCF_VERSION:
        raise ParseError(f"unsupported IRCF version {version}", 4)
    bbox = np.asarray(rest[:6], dtype=np.float64)
    res = tuple(int(r) for r in rest[6:])
    if min(res) < 2:
        raise ParseError(f"invalid resolution {res}", 32)

    n = res[0] * res[1] * res[2]
    expected = IRCF_HEADER_SIZE + 4 * n * 5
    if len(data) < expected:
        raise ParseError(f"truncated grids: expected {expected} bytes, found {len(data)}", len(data))

    offset = IRCF_HEADER_SIZE
    nx, ny, nz = res
    density = np.frombuffer(data, "<f4", n, offset).reshape(nz, ny, nx).transpose(2, 1, 0)
    offset += 4 * n
    refl = np.frombuffer(data, "<f4", 3 * n, offset).reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    offset += 12 * n
    shading = np.frombuffer(data, "<f4", n, offset).reshape(nz, ny, nx).transpose(2, 1, 0)

    return IntrinsicField(bbox[:3], bbox[3:],
                          density.astype(np.float64),
                          refl.astype(np.float64),
                          shading.astype(np.float64))
