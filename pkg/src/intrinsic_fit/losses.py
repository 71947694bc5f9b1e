"""
Intrinsic decomposition losses.

Each `*_term` function returns (value, gradients) where the gradients are
taken with respect to its array inputs, in argument order (None for inputs
that receive no gradient). The plain `loss_*` wrappers return the value only.

Regularisers take an optional boolean `mask` of participating rays; each is a
mean over participating rays and 0 when none participate.
"""

import numpy as np

NORMAL_EPS = 1e-8
CHROMA_EPS = 1e-8
CHROMA_MIN_L1 = 0.02
RS_COLOR_SCALE = 0.01
NRS_CHROMA_SCALE = 0.005


def _mask(mask, n):
    return np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


def chromaticity(x: np.ndarray) -> np.ndarray:
    """x / ||x||_1 per row (eps-guarded)"""
    return x / (np.abs(x).sum(axis=-1, keepdims=True) + CHROMA_EPS)


def _unit(v: np.ndarray):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, NORMAL_EPS), norm[..., 0]


def _unit_backward(grad_unit, unit, norm):
    """Pull a gradient w.r.t. v/|v| back to v"""
    proj = grad_unit - (grad_unit * unit).sum(axis=-1, keepdims=True) * unit
    return proj / np.maximum(norm, NORMAL_EPS)[..., None]


# =============================================================================
# Data term

def rgb_term(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    n = max(len(pred), 1)
    return float((diff ** 2).sum() / n), (2.0 * diff / n,)


def loss_rgb(pred, target) -> float:
    """Mean squared RGB error over the batch"""
    return rgb_term(np.asarray(pred, float), np.asarray(target, float))[0]


# =============================================================================
# Geometry

def normal_smooth_term(normals, normals_adj, depths, mask=None):
    """(1 - cos(N, N_adj)) / D^2; inputs may be unnormalized accumulated normals"""
    unit, norm = _unit(normals)
    unit_adj, norm_adj = _unit(normals_adj)
    active = _mask(mask, len(depths)) & (norm >= NORMAL_EPS) & (norm_adj >= NORMAL_EPS) & (depths > 0)
    k = active.sum()
    grads = (np.zeros_like(normals), np.zeros_like(normals_adj), np.zeros_like(depths))
    if k == 0:
        return 0.0, grads

    d = np.where(active, depths, 1.0)
    cos = (unit * unit_adj).sum(axis=-1)
    value = np.where(active, (1.0 - cos) / d ** 2, 0.0).sum() / k

    scale = np.where(active, -1.0 / (d ** 2 * k), 0.0)[:, None]
    g_n = _unit_backward(scale * unit_adj, unit, norm)
    g_adj = _unit_backward(scale * unit, unit_adj, norm_adj)
    g_d = np.where(active, -2.0 * (1.0 - cos) / (d ** 3 * k), 0.0)
    return float(value), (g_n, g_adj, g_d)


def loss_normal_smooth(normals, normals_adj, depths, mask=None) -> float:
    """Depth-weighted normal smoothness between each ray and its adjacent ray"""
    return normal_smooth_term(np.asarray(normals, float), np.asarray(normals_adj, float),
                              np.asarray(depths, float), mask)[0]


# =============================================================================
# Reflectance priors

def mean_reflectance_term(reflectance, beta: float, mask=None):
    active = _mask(mask, len(reflectance))
    k = active.sum()
    grad = np.zeros_like(reflectance)
    if k == 0:
        return 0.0, (grad,)
    idx = reflectance.argmax(axis=-1)
    peak = reflectance[np.arange(len(reflectance)), idx]
    value = np.abs(peak - beta)[active].sum() / k
    grad[np.arange(len(reflectance)), idx] = np.where(active, np.sign(peak - beta) / k, 0.0)
    return float(value), (grad,)


def loss_mean_reflectance(reflectance, beta: float = 0.6, mask=None) -> float:
    return mean_reflectance_term(np.asarray(reflectance, float), beta, mask)[0]


def chromaticity_term(reflectance, colors, mask=None):
    """||chroma(R) - chroma(C)||^2; dark pixels (||C||_1 < 0.02) are skipped"""
    active = _mask(mask, len(colors)) & (np.abs(colors).sum(axis=-1) >= CHROMA_MIN_L1)
    k = active.sum()
    grad = np.zeros_like(reflectance)
    if k == 0:
        return 0.0, (grad, None)
    diff = chromaticity(reflectance) - chromaticity(colors)
    value = (diff ** 2).sum(axis=-1)[active].sum() / k

    g = np.where(active[:, None], 2.0 * diff / k, 0.0)
    s = np.abs(reflectance).sum(axis=-1, keepdims=True) + CHROMA_EPS
    grad = g / s - (g * reflectance).sum(axis=-1, keepdims=True) * np.sign(reflectance) / s ** 2
    return float(value), (grad, None)


def loss_chromaticity(reflectance, colors, mask=None) -> float:
    return chromaticity_term(np.asarray(reflectance, float), np.asarray(colors, float), mask)[0]


def _weighted_l1_term(refl_a, refl_b, weights, active):
    k = active.sum()
    if k == 0:
        return 0.0, (np.zeros_like(refl_a), np.zeros_like(refl_b))
    diff = refl_a - refl_b
    w = np.where(active, weights, 0.0)
    value = (w * np.abs(diff).sum(axis=-1)).sum() / k
    g = (w / k)[:, None] * np.sign(diff)
    return float(value), (g, -g)


def reflectance_sparsity_term(refl, refl_adj, colors, colors_adj, mask=None):
    """Image-edge-aware L1 smoothness of reflectance between adjacent rays"""
    weights = np.exp(-((colors - colors_adj) ** 2).sum(axis=-1) / RS_COLOR_SCALE)
    value, (g, g_adj) = _weighted_l1_term(refl, refl_adj, weights, _mask(mask, len(refl)))
    return value, (g, g_adj, None, None)


def loss_reflectance_sparsity(refl, refl_adj, colors, colors_adj, mask=None) -> float:
    return reflectance_sparsity_term(*(np.asarray(a, float) for a in (refl, refl_adj, colors, colors_adj)),
                                     mask=mask)[0]


def nonlocal_sparsity_term(refl, refl_far, colors, colors_far, mask=None):
    """Pairs of far-apart pixels with matching chromaticity should share reflectance"""
    dchroma = chromaticity(colors) - chromaticity(colors_far)
    weights = np.exp(-(dchroma ** 2).sum(axis=-1) / NRS_CHROMA_SCALE)
    value, (g, g_far) = _weighted_l1_term(refl, refl_far, weights, _mask(mask, len(refl)))
    return value, (g, g_far, None, None)


def loss_nonlocal_sparsity(refl, refl_far, colors, colors_far, mask=None) -> float:
    return nonlocal_sparsity_term(*(np.asarray(a, float) for a in (refl, refl_far, colors, colors_far)),
                                  mask=mask)[0]


# =============================================================================
# Shading priors

def shading_smooth_term(shading, mask=None):
    """Population variance of accumulated shading across the batch"""
    active = _mask(mask, len(shading))
    k = active.sum()
    grad = np.zeros_like(shading)
    if k < 2:
        return 0.0, (grad,)
    mean = shading[active].mean()
    dev = np.where(active, shading - mean, 0.0)
    return float((dev ** 2).sum() / k), (2.0 * dev / k,)


def loss_shading_smooth(shading, mask=None) -> float:
    return shading_smooth_term(np.asarray(shading, float), mask)[0]


def shading_normal_term(shading, shading_far, normals, normals_far, points, points_far, mask=None):
    """omega_n * |S - S'| * (1 - tanh(Dis)) with omega_n the [0, 1]-clamped normal cosine.

    Gradients are returned for (shading, shading_far, normals, normals_far, points, points_far).
    """
    unit, norm = _unit(normals)
    unit_far, norm_far = _unit(normals_far)
    active = _mask(mask, len(shading)) & (norm >= NORMAL_EPS) & (norm_far >= NORMAL_EPS)
    k = active.sum()
    zeros = (np.zeros_like(shading), np.zeros_like(shading_far), np.zeros_like(normals),
             np.zeros_like(normals_far), np.zeros_like(points), np.zeros_like(points_far))
    if k == 0:
        return 0.0, zeros

    cos = (unit * unit_far).sum(axis=-1)
    omega = np.clip(cos, 0.0, 1.0)
    ds = shading - shading_far
    offset = points - points_far
    dis = np.linalg.norm(offset, axis=-1)
    falloff = 1.0 - np.tanh(dis)

    value = np.where(active, omega * np.abs(ds) * falloff, 0.0).sum() / k

    inv_k = np.where(active, 1.0 / k, 0.0)
    g_s = inv_k * omega * falloff * np.sign(ds)
    g_cos = inv_k * np.abs(ds) * falloff * ((cos > 0.0) & (cos < 1.0))
    g_n = _unit_backward(g_cos[:, None] * unit_far, unit, norm)
    g_nf = _unit_backward(g_cos[:, None] * unit, unit_far, norm_far)
    g_dis = -inv_k * omega * np.abs(ds) * (1.0 - np.tanh(dis) ** 2)
    g_p = (g_dis / np.maximum(dis, 1e-12))[:, None] * offset
    return float(value), (g_s, -g_s, g_n, g_nf, g_p, -g_p)


def loss_shading_normal(shading, shading_far, normals, normals_far, points, points_far, mask=None) -> float:
    return shading_normal_term(*(np.asarray(a, float) for a in
                                 (shading, shading_far, normals, normals_far, points, points_far)),
                               mask=mask)[0]
