"""
Analytic gradients of the volume renderer with respect to grid parameters.

The chain is: per-ray outputs -> per-sample (sigma, R, S, grad sigma) through
the quadrature weights -> grid nodes through the trilinear stencil (and the
central-difference stencil for grad sigma) -> raw parameters through the
positivity / squashing maps.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.special import expit

from src.field_core.field import IntrinsicField, central_gradient_adjoint, scatter_to_grid, trilinear_stencil
from src.field_core.rendering import MarchCache

# softplus^-1(1)
UNIT_SHADING_RAW = float(np.log(np.expm1(1.0)))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class OutputGradients:
    """Upstream gradients w.r.t. the per-ray outputs of `march`"""

    rgb: np.ndarray
    depth: np.ndarray
    normal_raw: np.ndarray
    shading: np.ndarray
    reflectance: np.ndarray

    @classmethod
    def zeros(cls, n_rays: int) -> "OutputGradients":
        return cls(np.zeros((n_rays, 3)), np.zeros(n_rays), np.zeros((n_rays, 3)),
                   np.zeros(n_rays), np.zeros((n_rays, 3)))


class FieldParameters:
    """Unconstrained grids behind an IntrinsicField.

    sigma = softplus(raw), R = sigmoid(raw), S = softplus(raw), applied at the
    grid nodes before interpolation.
    """

    NAMES = ("density", "reflectance", "shading")

    def __init__(self, bbox_min, bbox_max, raw: Dict[str, np.ndarray]):
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        self.raw = raw

    @classmethod
    def initial(cls, bbox_min, bbox_max, resolution, density_raw: float = -2.0) -> "FieldParameters":
        res = tuple(int(r) for r in resolution)
        return cls(bbox_min, bbox_max, {
            "density": np.full(res, density_raw),
            "reflectance": np.zeros(res + (3,)),
            "shading": np.full(res, UNIT_SHADING_RAW),
        })

    def copy(self) -> "FieldParameters":
        return FieldParameters(self.bbox_min, self.bbox_max, {k: v.copy() for k, v in self.raw.items()})

    def to_field(self) -> IntrinsicField:
        return IntrinsicField(self.bbox_min, self.bbox_max,
                              softplus(self.raw["density"]),
                              expit(self.raw["reflectance"]),
                              softplus(self.raw["shading"]))


def march_backward(cache: MarchCache, upstream: OutputGradients):
    """Per-sample gradients (d_sigma, d_R, d_S, d_grad) from per-ray output gradients.

    With e_i the upstream-weighted sample quantity and w_i = T_i alpha_i:
        dL/dtau_k = e_k T_{k+1} - sum_{i>k} e_i w_i
    """
    w, R, S = cache.weights, cache.reflectance, cache.shading
    g_rgb = upstream.rgb[:, None, :]
    g_refl = upstream.reflectance[:, None, :]
    g_n = upstream.normal_raw[:, None, :]

    e = ((g_rgb * R).sum(-1) * S
         + upstream.depth[:, None] * cache.ts
         + upstream.shading[:, None] * S
         + (g_refl * R).sum(-1)
         - (g_n * cache.grad).sum(-1))
    ew = e * w
    later = np.cumsum(ew[:, ::-1], axis=-1)[:, ::-1] - ew
    d_sigma = (e * cache.trans_next - later) * cache.deltas

    d_R = w[..., None] * (g_rgb * S[..., None] + g_refl)
    d_S = w * ((g_rgb * R).sum(-1) + upstream.shading[:, None])
    d_grad = -w[..., None] * g_n
    return d_sigma, d_R, d_S, d_grad


def field_backward(params: FieldParameters, field: IntrinsicField, cache: MarchCache,
                   upstream: OutputGradients) -> Dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every raw grid parameter"""
    d_sigma, d_R, d_S, d_grad = march_backward(cache, upstream)
    res = field.resolution
    size = int(np.prod(res))
    corners, weights = trilinear_stencil(field.bbox_min, field.spacing, res, cache.points)

    g_density = scatter_to_grid(corners, weights, d_sigma.ravel(), size).reshape(res)
    g_gradient = scatter_to_grid(corners, weights, d_grad.reshape(-1, 3), size).reshape(res + (3,))
    g_density += central_gradient_adjoint(g_gradient, field.spacing)
    g_refl = scatter_to_grid(corners, weights, d_R.reshape(-1, 3), size).reshape(res + (3,))
    g_shading = scatter_to_grid(corners, weights, d_S.ravel(), size).reshape(res)

    return {
        "density": g_density * expit(params.raw["density"]),
        "reflectance": g_refl * field.reflectance * (1.0 - field.reflectance),
        "shading": g_shading * expit(params.raw["shading"]),
    }
