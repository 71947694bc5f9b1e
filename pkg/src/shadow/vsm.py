"""
Variance shadow mapping for volume-rendered fields.

Each light gets a perspective camera aimed at the scene centre. From it we
render the expected depth X and second moment X2 (box-filtered to mu_X,
mu_X2). A camera pixel is reprojected to light depth z and light pixel r_l:
    V = 1                              if z <= mu_X(r_l)
    V = s2 / (s2 + (z - mu_X(r_l))^2)  otherwise, s2 = max(mu_X2 - mu_X^2, s2_min)
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.ndimage import map_coordinates, uniform_filter

from src.field_core.camera import CameraModel, intersect_aabb
from src.field_core.rendering import BACKGROUND_ALPHA, GBuffer, accumulation_weights
from src.field_core.sampling import cell_widths, stratified_depths
from src.lighting.envmap import LUMINANCE
from src.lighting.sg import SphericalGaussianLight
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)

SIGMA2_MIN = 1e-6
MAX_HALF_FOV_DEG = 75.0


@dataclass
class LightCamera:
    camera: CameraModel
    near: float
    far: float

    @property
    def center(self) -> np.ndarray:
        return self.camera.center


@dataclass
class ShadowAtlas:
    depth: np.ndarray
    depth_sq: np.ndarray
    mu_depth: Optional[np.ndarray] = None
    mu_depth_sq: Optional[np.ndarray] = None
    k: int = 1

    def filtered(self, k: int) -> "ShadowAtlas":
        return ShadowAtlas(self.depth, self.depth_sq, box_filter(self.depth, k), box_filter(self.depth_sq, k), k)

    def variance(self, sigma2_min: float = SIGMA2_MIN) -> np.ndarray:
        mu, mu2 = self._moments()
        return np.maximum(mu2 - mu ** 2, sigma2_min)

    def _moments(self):
        if self.mu_depth is None:
            return self.depth, self.depth_sq
        return self.mu_depth, self.mu_depth_sq


@dataclass
class ShadowConfig:
    k: int = 5
    sigma2_min: float = SIGMA2_MIN
    resolution: int = 128
    n_samples: Optional[int] = None
    normal_offset: Optional[float] = None
    depth_bias: Optional[float] = None
    distance_factor: float = 4.0
    threads: int = 1

    def validate(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise InvalidArgumentError(f"filter size k must be odd and >= 1, got {self.k}")
        if self.sigma2_min <= 0 or self.resolution < 2 or self.distance_factor <= 0:
            raise InvalidArgumentError("sigma2_min, resolution and distance_factor must be positive")


@dataclass
class ReprojectResult:
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    inside: np.ndarray


@dataclass
class ShadowResult:
    visibilities: List[np.ndarray]
    combined: np.ndarray
    atlases: List[ShadowAtlas] = field(default_factory=list)
    light_cameras: List[LightCamera] = field(default_factory=list)


def voxel_size(evaluator) -> float:
    return float(np.min(evaluator.spacing))


def light_camera(bbox_min, bbox_max, position=None, direction=None, resolution: int = 128,
                 distance_factor: float = 4.0) -> LightCamera:
    """Camera at `position`, or at centre + direction * distance_factor * diagonal, looking at
    the box centre with a square frustum fitted to the box's bounding sphere"""
    bbox_min = np.asarray(bbox_min, dtype=np.float64)
    bbox_max = np.asarray(bbox_max, dtype=np.float64)
    center = 0.5 * (bbox_min + bbox_max)
    diagonal = float(np.linalg.norm(bbox_max - bbox_min))
    radius = 0.5 * diagonal
    if position is None:
        if direction is None:
            raise InvalidArgumentError("a light camera needs a position or a direction")
        position = center + np.asarray(direction, dtype=np.float64) * distance_factor * diagonal
    position = np.asarray(position, dtype=np.float64)

    dist = float(np.linalg.norm(position - center))
    if dist > radius * 1.001:
        half = np.degrees(np.arcsin(radius / dist)) * 1.05
    else:
        half = MAX_HALF_FOV_DEG
        logger.warning("⚠ light lies inside the scene bounds; shadow frustum will not cover the box")
    half = min(half, MAX_HALF_FOV_DEG)
    camera = CameraModel.look_at(position, center, resolution, resolution, fov_y_deg=2.0 * half)
    return LightCamera(camera, max(dist - radius, 1e-3 * dist), dist + radius)


def light_camera_for_sg(sg: SphericalGaussianLight, bbox_min, bbox_max, config: ShadowConfig) -> LightCamera:
    return light_camera(bbox_min, bbox_max, sg.position, sg.mean, config.resolution, config.distance_factor)


def _depth_moments(evaluator, origins, dirs, ts, deltas):
    points = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    w, _ = accumulation_weights(evaluator.density_at(points), deltas)
    return w.sum(axis=-1), (w * ts).sum(axis=-1), (w * ts * ts).sum(axis=-1)


def render_light_depths(evaluator, light_cam: LightCamera, n_samples: int = None,
                        threads: int = 1, chunk_size: int = 4096) -> ShadowAtlas:
    """Expected depth and second moment per light pixel; transparent residue goes to the far plane"""
    cam = light_cam.camera
    if n_samples is None:
        n_samples = 2 * int(max(getattr(evaluator, "resolution", (64,))))
    origins, dirs = cam.pixel_rays()
    t_near, t_far, hit = intersect_aabb(origins, dirs, evaluator.bbox_min, evaluator.bbox_max)
    t_far = np.where(hit, t_far, t_near + 1.0)
    ts = stratified_depths(t_near, t_far, n_samples)
    deltas = cell_widths(ts, t_near, t_far) * hit[:, None]

    spans = [slice(i, i + chunk_size) for i in range(0, origins.shape[0], chunk_size)]

    def render_chunk(span):
        return _depth_moments(evaluator, origins[span], dirs[span], ts[span], deltas[span])

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(render_chunk, spans))
    else:
        parts = [render_chunk(span) for span in spans]
    alpha, depth, depth_sq = (np.concatenate(p) for p in zip(*parts))

    far = light_cam.far
    residual = 1.0 - alpha
    depth = depth + residual * far
    depth_sq = depth_sq + residual * far ** 2
    background = alpha < BACKGROUND_ALPHA
    depth = np.where(background, far, depth).reshape(cam.shape)
    depth_sq = np.where(background, far ** 2, depth_sq).reshape(cam.shape)
    return ShadowAtlas(depth, depth_sq)


def box_filter(image: np.ndarray, k: int) -> np.ndarray:
    """Mean over a k x k window with edge clamping"""
    if k < 1 or k % 2 == 0:
        raise InvalidArgumentError(f"box filter size must be odd and >= 1, got {k}")
    image = np.asarray(image, dtype=np.float64)
    if k == 1:
        return image.copy()
    return uniform_filter(image, size=k, mode="nearest")


def reproject_points(points: np.ndarray, light_cam: LightCamera) -> ReprojectResult:
    """Light-view pixel coordinates and Euclidean distance to the light for world points"""
    cam = light_cam.camera
    u, v, zc = cam.project(points)
    z = np.linalg.norm(points - cam.center, axis=-1)
    inside = (zc > 0) & (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    return ReprojectResult(z, np.nan_to_num(u), np.nan_to_num(v), inside)


def reproject(depth: np.ndarray, cam: CameraModel, light_cam: LightCamera) -> ReprojectResult:
    dirs = cam.pixel_directions().reshape(cam.shape + (3,))
    return reproject_points(cam.center + depth[..., None] * dirs, light_cam)


def visibility(z, u, v, atlas: ShadowAtlas, sigma2_min: float = SIGMA2_MIN) -> np.ndarray:
    """Chebyshev upper bound with bilinear lookups of the filtered moments"""
    mu_map, mu2_map = atlas._moments()
    coords = np.stack([np.asarray(v, dtype=np.float64).ravel(), np.asarray(u, dtype=np.float64).ravel()])
    mu = map_coordinates(mu_map, coords, order=1, mode="nearest").reshape(np.shape(z))
    mu2 = map_coordinates(mu2_map, coords, order=1, mode="nearest").reshape(np.shape(z))
    return chebyshev_visibility(z, mu, mu2, sigma2_min)


def chebyshev_visibility(z, mu, mu2, sigma2_min: float = SIGMA2_MIN) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    variance = np.maximum(np.asarray(mu2) - np.asarray(mu) ** 2, sigma2_min)
    gap = z - mu
    return np.where(gap <= 0, 1.0, variance / (variance + gap ** 2))


def naive_shadow_visibility(z, u, v, depth_map: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """Hard shadow-map test against the nearest light pixel"""
    rows = np.clip(np.rint(v).astype(int), 0, depth_map.shape[0] - 1)
    cols = np.clip(np.rint(u).astype(int), 0, depth_map.shape[1] - 1)
    return (np.asarray(z) - bias <= depth_map[rows, cols]).astype(np.float64)


def _offset_points(gbuffer: GBuffer, offset: float) -> np.ndarray:
    return gbuffer.surface_points() + offset * gbuffer.normal


def sg_visibility(gbuffer: GBuffer, atlas: ShadowAtlas, light_cam: LightCamera, normal_offset: float,
                  depth_bias: float, sigma2_min: float = SIGMA2_MIN) -> np.ndarray:
    fg = gbuffer.foreground()
    proj = reproject_points(_offset_points(gbuffer, normal_offset), light_cam)
    v = visibility(proj.z - depth_bias, proj.u, proj.v, atlas, sigma2_min)
    return np.where(fg & proj.inside, v, 1.0)


def shadow_pass(gbuffer: GBuffer, evaluator, sgs: List[SphericalGaussianLight],
                config: ShadowConfig = None) -> ShadowResult:
    """One atlas per SG (rendered from its centre); V_i per SG and an energy-weighted product"""
    config = config or ShadowConfig()
    config.validate()
    if not sgs:
        raise InvalidArgumentError("shadow_pass needs at least one light")
    spacing = voxel_size(evaluator)
    normal_offset = 2.0 * spacing if config.normal_offset is None else config.normal_offset
    depth_bias = spacing if config.depth_bias is None else config.depth_bias

    result = ShadowResult([], np.ones(gbuffer.shape))
    energies = np.array([float(sg.energy() @ LUMINANCE) for sg in sgs])
    shares = energies / energies.sum() if energies.sum() > 0 else np.full(len(sgs), 1.0 / len(sgs))
    for sg, share in zip(sgs, shares):
        lc = light_camera_for_sg(sg, evaluator.bbox_min, evaluator.bbox_max, config)
        atlas = render_light_depths(evaluator, lc, config.n_samples, config.threads).filtered(config.k)
        v = sg_visibility(gbuffer, atlas, lc, normal_offset, depth_bias, config.sigma2_min)
        result.visibilities.append(v)
        result.atlases.append(atlas)
        result.light_cameras.append(lc)
        result.combined *= v ** share
    logger.info(f"✓ Shadow pass: {len(sgs)} atlases, k={config.k}")
    return result
