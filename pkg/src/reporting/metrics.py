"""
Image and map comparison metrics used by tests, the pipeline summary and shadow reports.
"""

from typing import Dict

import numpy as np


def mse(a: np.ndarray, b: np.ndarray, mask: np.ndarray = None) -> float:
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    return float(diff.mean()) if diff.size else 0.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, mask: np.ndarray = None) -> float:
    err = mse(a, b, mask)
    return float("inf") if err == 0 else float(10.0 * np.log10(peak ** 2 / err))


def scale_align(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """pred times the least-squares scale onto target"""
    pred = np.asarray(pred, dtype=np.float64)
    denom = float((pred * pred).sum())
    return pred if denom == 0 else pred * float((pred * np.asarray(target)).sum()) / denom


def pearson_after_scale(pred: np.ndarray, target: np.ndarray, mask: np.ndarray = None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mask is not None:
        pred, target = pred[mask], target[mask]
    a = scale_align(pred, target).ravel()
    b = target.ravel()
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def chroma_saturation(image: np.ndarray, mask: np.ndarray = None) -> float:
    """Mean (max - min) channel spread; 0 for grey images"""
    image = np.asarray(image, dtype=np.float64)
    spread = image.max(axis=-1) - image.min(axis=-1)
    if mask is not None:
        spread = spread[mask]
    return float(spread.mean()) if spread.size else 0.0


def total_variation(image: np.ndarray) -> float:
    image = np.asarray(image, dtype=np.float64)
    return float(np.abs(np.diff(image, axis=0)).sum() + np.abs(np.diff(image, axis=1)).sum())


def highlight_area(image: np.ndarray, fraction: float = 0.5) -> int:
    """Pixels whose luminance exceeds `fraction` of the peak"""
    lum = np.asarray(image, dtype=np.float64)
    if lum.ndim == 3:
        lum = lum.mean(axis=-1)
    peak = lum.max()
    return 0 if peak <= 0 else int((lum > fraction * peak).sum())


def visibility_stats(v_test: np.ndarray, v_ref: np.ndarray, mask: np.ndarray = None,
                     threshold: float = 0.5) -> Dict[str, float]:
    """Mean |dV| and share of pixels classified the same way at `threshold`"""
    a = np.asarray(v_test, dtype=np.float64)
    b = np.asarray(v_ref, dtype=np.float64)
    if mask is not None:
        a, b = a[mask], b[mask]
    if a.size == 0:
        return {"mean_abs_diff": 0.0, "agreement": 1.0, "pixels": 0}
    return {
        "mean_abs_diff": float(np.abs(a - b).mean()),
        "agreement": float(((a > threshold) == (b > threshold)).mean()),
        "pixels": int(a.size),
    }
