"""
Intrinsic field fitting: total loss with analytic gradients and the Adam loop.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.field_core.camera import CameraModel, intersect_aabb
from src.field_core.field import IntrinsicField
from src.field_core.rendering import BACKGROUND_ALPHA, march
from src.field_core.sampling import cell_widths, stratified_depths
from src.intrinsic_fit import losses
from src.intrinsic_fit.backward import FieldParameters, OutputGradients, field_backward
from src.intrinsic_fit.batching import PixelBatch, PosedImage, sample_pixel_batch
from src.intrinsic_fit.optimizer import Adam, ExponentialSchedule
from src.utils.errors import ConfigError, InvalidArgumentError, NumericError
from src.utils.logger import get_logger, progress_enabled

logger = get_logger(__name__)

TERM_NAMES = ("rgb", "normal_smooth", "mean_reflectance", "chromaticity",
              "reflectance_sparsity", "nonlocal_sparsity", "shading_smooth", "shading_normal")


@dataclass
class LossWeights:
    """Weights lambda_0..lambda_7 of the total loss, in TERM_NAMES order"""

    rgb: float = 1.0
    normal_smooth: float = 0.01
    mean_reflectance: float = 0.1
    chromaticity: float = 1.0
    reflectance_sparsity: float = 0.01
    nonlocal_sparsity: float = 0.005
    shading_smooth: float = 0.1
    shading_normal: float = 0.001

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value < 0 or not np.isfinite(value):
                raise InvalidArgumentError(f"loss weight '{name}' must be a non-negative number, got {value}")

    @classmethod
    def rgb_only(cls) -> "LossWeights":
        return cls(1.0, 0, 0, 0, 0, 0, 0, 0)

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(0, 0, 0, 0, 0, 0, 0, 0)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class FitConfig:
    iterations: int = 10000
    batch_size: int = 512
    resolution: Tuple[int, int, int] = (64, 64, 64)
    bbox_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bbox_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    lr_start: float = 5e-3
    lr_end: float = 5e-4
    seed: int = 0
    beta_avg_r: float = 0.6
    n_samples: int = 64
    jitter: bool = True
    log_every: int = 500
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.batch_size < 2:
            raise InvalidArgumentError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 < self.beta_avg_r <= 1.0:
            raise InvalidArgumentError(f"beta_avg_r must lie in (0, 1], got {self.beta_avg_r}")
        if self.iterations < 0 or self.n_samples < 2:
            raise InvalidArgumentError("iterations must be >= 0 and n_samples >= 2")
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise InvalidArgumentError(f"resolution must be >= 2 per axis, got {self.resolution}")
        if np.any(np.asarray(self.bbox_min) >= np.asarray(self.bbox_max)):
            raise InvalidArgumentError("bbox_min must be < bbox_max componentwise")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        self.weights.validate()


@dataclass
class RayBundle:
    """Origins, directions and (B, S) samples for a batch's main, adjacent and far rays"""

    origins: np.ndarray
    dirs: np.ndarray
    ts: np.ndarray
    deltas: np.ndarray


@dataclass
class LossResult:
    value: float
    terms: Dict[str, float]
    grads: Dict[str, np.ndarray] = None


def prepare_rays(batch: PixelBatch, camera: CameraModel, bbox_min, bbox_max, n_samples: int,
                 rng: np.random.Generator = None) -> RayBundle:
    """Stratified samples over each ray's box intersection; jittered when an rng is given"""
    rows, cols = batch.all_pixels()
    origins, dirs = camera.pixel_rays(rows, cols)
    t_near, t_far, hit = intersect_aabb(origins, dirs, bbox_min, bbox_max)
    t_far = np.where(hit, t_far, t_near + 1.0)
    ts = stratified_depths(t_near, t_far, n_samples, jitter=rng is not None, rng=rng)
    deltas = cell_widths(ts, t_near, t_far) * hit[:, None]
    return RayBundle(origins, dirs, ts, deltas)


def total_loss(batch: PixelBatch, rays: RayBundle, params: FieldParameters,
               weights: LossWeights, beta_avg_r: float = 0.6, with_grad: bool = True) -> LossResult:
    """Weighted sum of the eight losses and its gradient w.r.t. every raw grid value.

    The RGB term covers all rendered rays (main, adjacent and far); the
    regularisers use foreground rays only (alpha >= 0.05 on both partners).
    """
    weights.validate()
    fld = params.to_field()
    out, cache = march(fld, rays.origins, rays.dirs, rays.ts, rays.deltas, keep_cache=True)

    n = len(batch)
    m, a, f = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    fg = out.alpha >= BACKGROUND_ALPHA
    points = rays.origins + out.depth[:, None] * rays.dirs
    targets = np.concatenate([batch.colors, batch.colors_adj, batch.colors_far])
    lam = weights.as_dict()
    up = OutputGradients.zeros(3 * n)
    terms = {}

    value, (g,) = losses.rgb_term(out.rgb, targets)
    terms["rgb"] = value
    up.rgb += lam["rgb"] * g

    value, (g_n, g_na, g_d) = losses.normal_smooth_term(out.normal_raw[m], out.normal_raw[a],
                                                        out.depth[m], fg[m] & fg[a])
    terms["normal_smooth"] = value
    up.normal_raw[m] += lam["normal_smooth"] * g_n
    up.normal_raw[a] += lam["normal_smooth"] * g_na
    up.depth[m] += lam["normal_smooth"] * g_d

    value, (g,) = losses.mean_reflectance_term(out.reflectance[m], beta_avg_r, fg[m])
    terms["mean_reflectance"] = value
    up.reflectance[m] += lam["mean_reflectance"] * g

    value, (g, _) = losses.chromaticity_term(out.reflectance[m], batch.colors, fg[m])
    terms["chromaticity"] = value
    up.reflectance[m] += lam["chromaticity"] * g

    value, (g, g_a, _, _) = losses.reflectance_sparsity_term(out.reflectance[m], out.reflectance[a],
                                                            batch.colors, batch.colors_adj, fg[m] & fg[a])
    terms["reflectance_sparsity"] = value
    up.reflectance[m] += lam["reflectance_sparsity"] * g
    up.reflectance[a] += lam["reflectance_sparsity"] * g_a

    value, (g, g_f, _, _) = losses.nonlocal_sparsity_term(out.reflectance[m], out.reflectance[f],
                                                         batch.colors, batch.colors_far, fg[m] & fg[f])
    terms["nonlocal_sparsity"] = value
    up.reflectance[m] += lam["nonlocal_sparsity"] * g
    up.reflectance[f] += lam["nonlocal_sparsity"] * g_f

    value, (g,) = losses.shading_smooth_term(out.shading[m], fg[m])
    terms["shading_smooth"] = value
    up.shading[m] += lam["shading_smooth"] * g

    value, (g_s, g_sf, g_n, g_nf, g_p, g_pf) = losses.shading_normal_term(
        out.shading[m], out.shading[f], out.normal_raw[m], out.normal_raw[f],
        points[m], points[f], fg[m] & fg[f])
    terms["shading_normal"] = value
    lam_sn = lam["shading_normal"]
    up.shading[m] += lam_sn * g_s
    up.shading[f] += lam_sn * g_sf
    up.normal_raw[m] += lam_sn * g_n
    up.normal_raw[f] += lam_sn * g_nf
    # points = origin + depth * dir
    up.depth[m] += lam_sn * (g_p * rays.dirs[m]).sum(-1)
    up.depth[f] += lam_sn * (g_pf * rays.dirs[f]).sum(-1)

    total = float(sum(lam[name] * terms[name] for name in TERM_NAMES))
    result = LossResult(total, terms)
    if with_grad:
        result.grads = field_backward(params, fld, cache, up)
    return result


class IntrinsicTrainer:
    """Fits FieldParameters to posed images with Adam; one random image per iteration"""

    def __init__(self, images: List[PosedImage], config: FitConfig = None):
        self.images = images
        self.config = config or FitConfig()
        self.params = None
        self.history: pd.DataFrame = None
        self.stats = {}

    def check_coverage(self) -> None:
        """Every camera must see the field box through at least one pixel"""
        if len(self.images) < 2:
            raise ConfigError(f"fit needs at least 2 posed images, got {len(self.images)}")
        hits = []
        for posed in self.images:
            origins, dirs = posed.camera.pixel_rays()
            _, _, hit = intersect_aabb(origins, dirs, self.config.bbox_min, self.config.bbox_max)
            hits.append(int(hit.sum()))
            if not hit.any():
                raise ConfigError(f"no rays of view '{posed.name}' intersect the field bbox")
        self.stats["rays_hitting_bbox"] = int(sum(hits))
        logger.info(f"✓ {self.stats['rays_hitting_bbox']} rays intersect the field bbox")

    def train(self) -> IntrinsicField:
        cfg = self.config
        cfg.validate()
        self.check_coverage()

        rng = np.random.default_rng(cfg.seed)
        self.params = FieldParameters.initial(cfg.bbox_min, cfg.bbox_max, cfg.resolution)
        adam = Adam(lr=cfg.lr_start)
        schedule = ExponentialSchedule(cfg.lr_start, cfg.lr_end, cfg.iterations)
        records = []

        logger.info(f"Fitting {cfg.resolution} field on {len(self.images)} views "
                    f"for {cfg.iterations} iterations")
        bar = tqdm(range(cfg.iterations), desc="fit", disable=not progress_enabled())
        for it in bar:
            index = int(rng.integers(len(self.images)))
            posed = self.images[index]
            batch = sample_pixel_batch(posed.image, cfg.batch_size, rng, image_index=index)
            rays = prepare_rays(batch, posed.camera, cfg.bbox_min, cfg.bbox_max, cfg.n_samples,
                                rng if cfg.jitter else None)
            result = total_loss(batch, rays, self.params, cfg.weights, cfg.beta_avg_r)

            if not np.isfinite(result.value) or not all(np.all(np.isfinite(g)) for g in result.grads.values()):
                raise NumericError(f"non-finite loss or gradient at iteration {it}")

            lr = schedule(it)
            adam.step(self.params.raw, result.grads, lr=lr)
            records.append({"iteration": it, "lr": lr, "total": result.value, **result.terms})

            if cfg.log_every and (it + 1) % cfg.log_every == 0:
                logger.info(f"  iter {it + 1}/{cfg.iterations} loss {result.value:.5f} "
                            f"rgb {result.terms['rgb']:.5f}")
            bar.set_postfix(loss=f"{result.value:.4f}")

        self.history = pd.DataFrame(records, columns=["iteration", "lr", "total", *TERM_NAMES])
        self.stats["final_loss"] = float(self.history["total"].iloc[-1]) if records else float("nan")
        logger.info(f"✓ Fit finished, final loss {self.stats['final_loss']:.5f}")
        return self.params.to_field()

    def save_history(self, path) -> None:
        self.history.to_csv(path, index=False)


def fit(images: List[PosedImage], config: FitConfig = None, weights: LossWeights = None) -> IntrinsicField:
    """Fit an IntrinsicField to posed images; deterministic for a fixed seed"""
    config = config or FitConfig()
    if weights is not None:
        config.weights = weights
    return IntrinsicTrainer(images, config).train()
