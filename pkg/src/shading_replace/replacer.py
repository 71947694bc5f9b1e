"""
Shading transfer from scene surface points onto an inserted object.

Every object shell point is matched against scene shell points by
score = max(0, cos(N_o, N_s)) * (1 - tanh(dist / d0)); the shading of the
top-p positive-score matches is aggregated and rescaled by beta_s / beta_o.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.neighbors import NearestNeighbors

from src.composer.insertion import InsertionPose
from src.field_core.field import IntrinsicField
from src.utils.errors import DegenerateFieldError, InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)

AGGREGATIONS = ("mean", "max")
NORMAL_EPS = 1e-8
_FACES = [(axis, step) for axis in range(3) for step in (-1, 1)]


@dataclass
class SurfacePointSet:
    positions: np.ndarray
    normals: np.ndarray
    shading: np.ndarray
    indices: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.positions)

    def transformed(self, pose: InsertionPose) -> "SurfacePointSet":
        """Positions and normals moved into the scene frame"""
        return SurfacePointSet(pose.apply(self.positions), self.normals @ pose.rotation.T,
                               self.shading, self.indices)


@dataclass
class ReplaceConfig:
    p: int = 32
    d0: Optional[float] = None
    aggregation: str = "mean"
    density_threshold: float = 10.0
    max_scene_points: int = 20000
    candidates: Optional[int] = None
    chunk_size: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.p < 1:
            raise InvalidArgumentError(f"p must be >= 1, got {self.p}")
        if self.d0 is not None and self.d0 <= 0:
            raise InvalidArgumentError(f"d0 must be > 0, got {self.d0}")
        if self.aggregation not in AGGREGATIONS:
            raise InvalidArgumentError(f"aggregation must be one of {AGGREGATIONS}, got '{self.aggregation}'")
        if self.density_threshold <= 0:
            raise InvalidArgumentError("density threshold must be > 0")
        if self.candidates is not None and self.candidates < self.p:
            raise InvalidArgumentError("candidates must be >= p")


@dataclass
class ReplaceResult:
    field: IntrinsicField
    warnings: List[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def shell_mask(density: np.ndarray, tau: float) -> np.ndarray:
    """Voxels with sigma >= tau and a 6-neighbour below tau; outside the grid counts as empty"""
    solid = density >= tau
    padded = np.pad(solid, 1, constant_values=False)
    exposed = np.zeros_like(solid)
    core = tuple(slice(1, -1) for _ in range(3))
    for axis, step in _FACES:
        exposed |= ~np.roll(padded, step, axis=axis)[core]
    return solid & exposed


def _shell_points(fld: IntrinsicField, tau: float) -> SurfacePointSet:
    mask = shell_mask(fld.density, tau)
    grad = fld.density_gradient_grid()[mask]
    norm = np.linalg.norm(grad, axis=-1)
    keep = norm >= NORMAL_EPS
    idx = np.argwhere(mask)[keep]
    return SurfacePointSet(
        positions=fld.node_positions()[mask][keep],
        normals=-grad[keep] / norm[keep, None],
        shading=fld.shading[mask][keep],
        indices=idx,
    )


def extract_surface_points(fld: IntrinsicField, tau: float, max_count: int = None, seed: int = 0) -> SurfacePointSet:
    """Shell voxel centres with normals from -grad sigma, uniformly subsampled to max_count"""
    if tau <= 0:
        raise InvalidArgumentError(f"density threshold must be > 0, got {tau}")
    points = _shell_points(fld, tau)
    if len(points) == 0:
        raise DegenerateFieldError(f"no shell voxels at density threshold {tau}")
    if max_count is not None and len(points) > max_count:
        pick = np.sort(np.random.default_rng(seed).choice(len(points), max_count, replace=False))
        points = SurfacePointSet(points.positions[pick], points.normals[pick],
                                 points.shading[pick], points.indices[pick])
    return points


def pair_score(normal_o, normal_s, dist, d0: float):
    """max(0, cos) * (1 - tanh(dist / d0)); broadcasts over leading axes"""
    cos = (np.asarray(normal_o) * np.asarray(normal_s)).sum(axis=-1)
    return np.maximum(cos, 0.0) * (1.0 - np.tanh(np.asarray(dist) / d0))


class ShadingMatcher:
    """Scores object points against a scene point set and aggregates top-p shading"""

    def __init__(self, scene: SurfacePointSet, config: ReplaceConfig, d0: float):
        self.scene = scene
        self.config = config
        self.d0 = d0
        self.p = min(config.p, len(scene))
        self.index = None
        if config.candidates is not None and config.candidates < len(scene):
            self.index = NearestNeighbors(n_neighbors=config.candidates).fit(scene.positions)

    def _aggregate(self, scores: np.ndarray, shading: np.ndarray) -> np.ndarray:
        """Rows of (M, C) scores and matching shading -> (M,) aggregated values (nan when no positive score)"""
        p = min(self.p, scores.shape[1])
        top = np.argpartition(-scores, p - 1, axis=1)[:, :p]
        top_scores = np.take_along_axis(scores, top, axis=1)
        top_shading = np.take_along_axis(shading, top, axis=1)
        positive = top_scores > 0
        count = positive.sum(axis=1)
        if self.config.aggregation == "max":
            value = np.where(positive, top_shading, -np.inf).max(axis=1)
        else:
            value = np.where(positive, top_shading, 0.0).sum(axis=1) / np.maximum(count, 1)
        return np.where(count > 0, value, np.nan)

    def match(self, points: SurfacePointSet) -> np.ndarray:
        out = np.empty(len(points))
        step = self.config.chunk_size
        for start in range(0, len(points), step):
            pos = points.positions[start:start + step]
            nrm = points.normals[start:start + step]
            if self.index is not None:
                dist, cand = self.index.kneighbors(pos)
                scores = pair_score(nrm[:, None, :], self.scene.normals[cand], dist, self.d0)
                shading = self.scene.shading[cand]
            else:
                cos = nrm @ self.scene.normals.T
                dist = cdist(pos, self.scene.positions)
                scores = np.maximum(cos, 0.0) * (1.0 - np.tanh(dist / self.d0))
                shading = np.broadcast_to(self.scene.shading, scores.shape)
            out[start:start + step] = self._aggregate(scores, shading)
        return out


def fill_from_shell(shape, shell_indices: np.ndarray, shell_values: np.ndarray) -> np.ndarray:
    """Full grid where every voxel takes the value of its nearest shell voxel"""
    grid_idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, 3)
    nearest = NearestNeighbors(n_neighbors=1).fit(shell_indices)
    _, which = nearest.kneighbors(grid_idx)
    grid = shell_values[which[:, 0]].reshape(shape)
    grid[tuple(shell_indices.T)] = shell_values
    return grid


def replace_shading(object_field: IntrinsicField, scene_points: SurfacePointSet, pose: InsertionPose,
                    config: ReplaceConfig = None, beta_s: float = 0.6, beta_o: float = 0.6,
                    scene_diagonal: float = None) -> ReplaceResult:
    """Replace the object's shading grid with shading transferred from the scene"""
    config = config or ReplaceConfig()
    config.validate()
    pose.validate()
    if len(scene_points) == 0:
        raise InvalidArgumentError("scene point set is empty")
    if beta_o <= 0:
        raise InvalidArgumentError(f"beta_o must be > 0, got {beta_o}")

    d0 = config.d0
    if d0 is None:
        if scene_diagonal is None:
            extent = scene_points.positions.max(axis=0) - scene_points.positions.min(axis=0)
            scene_diagonal = float(np.linalg.norm(extent))
        d0 = max(0.1 * scene_diagonal, 1e-6)

    shell = extract_surface_points(object_field, config.density_threshold)
    matcher = ShadingMatcher(scene_points, config, d0)
    values = matcher.match(shell.transformed(pose))

    result_warnings = []
    missing = np.isnan(values)
    if missing.any():
        fallback = float(scene_points.shading.mean())
        values[missing] = fallback
        message = (f"{int(missing.sum())} object points had no positive-score match; "
                   f"used global mean shading {fallback:.4f}")
        logger.warning(f"⚠ {message}")
        result_warnings.append(message)

    values = values * (beta_s / beta_o)
    grid = fill_from_shell(object_field.resolution, shell.indices, values)
    logger.info(f"✓ Re-shaded {len(shell)} object shell points from {len(scene_points)} scene points")
    return ReplaceResult(
        field=object_field.with_shading(grid),
        warnings=result_warnings,
        stats={"shell_points": len(shell), "scene_points": len(scene_points), "d0": d0,
               "fallbacks": int(missing.sum())},
    )
