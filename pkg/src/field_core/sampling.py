"""
Sample placement along rays.
"""

from dataclasses import dataclass

import numpy as np

from src.field_core.camera import Ray
from src.utils.errors import InvalidArgumentError


@dataclass
class SampleSet:
    """Strictly increasing sample depths and their quadrature cell widths"""

    ts: np.ndarray
    deltas: np.ndarray

    def __len__(self) -> int:
        return len(self.ts)


def cell_widths(ts: np.ndarray, t_near, t_far) -> np.ndarray:
    """Widths of cells bounded by midpoints between samples and by [t_near, t_far].

    Works on (n,) or (B, n) depths; t_near/t_far broadcast against the leading axis.
    """
    ts = np.asarray(ts, dtype=np.float64)
    t_near = np.asarray(t_near, dtype=np.float64)[..., None]
    t_far = np.asarray(t_far, dtype=np.float64)[..., None]
    mids = 0.5 * (ts[..., 1:] + ts[..., :-1])
    edges = np.concatenate([np.broadcast_to(t_near, ts.shape[:-1] + (1,)), mids,
                            np.broadcast_to(t_far, ts.shape[:-1] + (1,))], axis=-1)
    return np.diff(edges, axis=-1)


def stratified_depths(t_near: np.ndarray, t_far: np.ndarray, n: int, jitter: bool = False,
                      rng: np.random.Generator = None) -> np.ndarray:
    """One depth per uniform stratum for a batch of rays, shape (B, n)"""
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 samples per ray, got {n}")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    if jitter:
        rng = rng if rng is not None else np.random.default_rng(0)
        offsets = rng.random((t_near.shape[0], n))
    else:
        offsets = np.full((t_near.shape[0], n), 0.5)
    step = (t_far - t_near) / n
    return t_near[:, None] + (np.arange(n) + offsets) * step[:, None]


def stratified_samples(ray: Ray, n: int, jitter: bool = False, rng_seed: int = 0) -> SampleSet:
    """n samples, one per uniform stratum of [t_near, t_far]; stratum centres without jitter"""
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 samples per ray, got {n}")
    rng = np.random.default_rng(rng_seed)
    ts = stratified_depths(ray.t_near, ray.t_far, n, jitter, rng)[0]
    return SampleSet(ts, cell_widths(ts, ray.t_near, ray.t_far))
