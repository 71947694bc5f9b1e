"""
Brute-force shadow rays: transmittance from a surface point to the light.
Used as the reference for the variance shadow maps and for timing comparisons.
"""

import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.field_core.camera import intersect_aabb
from src.field_core.rendering import GBuffer
from src.field_core.sampling import cell_widths, stratified_depths
from src.shadow.vsm import ShadowConfig, shadow_pass, voxel_size
from src.utils.logger import get_logger

logger = get_logger(__name__)


def transmittance(evaluator, origins: np.ndarray, dirs: np.ndarray, t_max: np.ndarray, n_samples: int = 64):
    """exp(-sum sigma delta) along each ray over its box intersection, capped at t_max"""
    t_near, t_far, hit = intersect_aabb(origins, dirs, evaluator.bbox_min, evaluator.bbox_max)
    t_far = np.minimum(t_far, t_max)
    hit = hit & (t_far > t_near)
    t_far = np.where(hit, t_far, t_near + 1.0)
    ts = stratified_depths(t_near, t_far, n_samples)
    deltas = cell_widths(ts, t_near, t_far) * hit[:, None]
    points = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    sigma = evaluator.density_at(points)
    return np.exp(-(sigma * deltas).sum(axis=-1))


def shadow_ray_visibility_oracle(evaluator, point, normal, light_position, epsilon: float = None,
                                 n_samples: int = 64) -> float:
    """Transmittance from point + epsilon * normal toward a point light"""
    if epsilon is None:
        epsilon = 2.0 * voxel_size(evaluator)
    start = np.asarray(point, dtype=np.float64) + epsilon * np.asarray(normal, dtype=np.float64)
    to_light = np.asarray(light_position, dtype=np.float64) - start
    dist = np.linalg.norm(to_light)
    if dist == 0:
        return 1.0
    return float(transmittance(evaluator, start[None], (to_light / dist)[None], np.array([dist]), n_samples)[0])


def oracle_visibility_map(gbuffer: GBuffer, evaluator, light_position, epsilon: float = None,
                          n_samples: int = 64) -> np.ndarray:
    """Vectorised oracle over every foreground pixel; background stays 1"""
    if epsilon is None:
        epsilon = 2.0 * voxel_size(evaluator)
    fg = gbuffer.foreground()
    out = np.ones(gbuffer.shape)
    if not fg.any():
        return out
    starts = gbuffer.surface_points()[fg] + epsilon * gbuffer.normal[fg]
    to_light = np.asarray(light_position, dtype=np.float64) - starts
    dist = np.linalg.norm(to_light, axis=-1)
    dirs = to_light / np.maximum(dist, 1e-12)[:, None]
    out[fg] = transmittance(evaluator, starts, dirs, dist, n_samples)
    return out


@dataclass
class ShadowBenchmark:
    vsm_seconds: float
    oracle_seconds: float
    pixels: int

    @property
    def ratio(self) -> float:
        return self.vsm_seconds / self.oracle_seconds if self.oracle_seconds > 0 else float("inf")

    @property
    def speedup(self) -> float:
        """How many times faster the shadow maps were than the per-pixel rays"""
        return self.oracle_seconds / self.vsm_seconds if self.vsm_seconds > 0 else float("inf")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"vsm_seconds": self.vsm_seconds, "oracle_seconds": self.oracle_seconds,
                              "pixels": self.pixels, "ratio": self.ratio, "speedup": self.speedup}])


def benchmark_shadow(gbuffer: GBuffer, evaluator, sg, config: ShadowConfig = None,
                     n_samples: int = 64) -> ShadowBenchmark:
    """Wall time of shadow_pass against a per-pixel shadow-ray loop (reported, not enforced)"""
    config = config or ShadowConfig()
    start = time.perf_counter()
    result = shadow_pass(gbuffer, evaluator, [sg], config)
    vsm_seconds = time.perf_counter() - start

    light_position = result.light_cameras[0].center
    fg = np.argwhere(gbuffer.foreground())
    points = gbuffer.surface_points()
    start = time.perf_counter()
    for i, j in fg:
        shadow_ray_visibility_oracle(evaluator, points[i, j], gbuffer.normal[i, j], light_position,
                                     n_samples=n_samples)
    oracle_seconds = time.perf_counter() - start

    bench = ShadowBenchmark(vsm_seconds, oracle_seconds, len(fg))
    logger.info(f"✓ Shadow timing: VSM {vsm_seconds:.3f}s vs per-pixel rays {oracle_seconds:.3f}s "
                f"(speedup {bench.speedup:.1f}x)")
    return bench
