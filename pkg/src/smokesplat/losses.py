"""Training objectives: rendering loss, smoke priors, depth and mask terms.

Every function returns ``(value, grads)``. Image-space terms return a gradient
array with the shape of their first argument; parameter-space terms return a
dict keyed by GaussianSet parameter name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core.sh import C0
from .core.types import GaussianSet, Modality, sigmoid, softplus
from .errors import InvalidParameterError, TrainingDivergence
from .metrics import ssim_loss_map

TERMS = ("render", "smoke_alpha", "smoke_color", "mono", "depth", "mask")


@dataclass
class LossWeights:
    render: float = 1.0
    smoke_alpha: float = 0.1
    smoke_color: float = 0.05
    mono: float = 0.1
    depth: float = 2.0
    mask: float = 0.5
    dssim: float = 0.2

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v >= 0:
                raise InvalidParameterError(f"loss weight {name} must be non-negative")
        if self.dssim > 1:
            raise InvalidParameterError("dssim weight must lie in [0, 1]")

    def weight(self, term: str) -> float:
        return getattr(self, term)


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def render_loss(pred, gt, dssim: float = 0.2):
    """(1 - dssim) * L1 + dssim * (1 - SSIM) / 2."""
    pred, gt = _same_shape(pred, gt)
    diff = pred - gt
    l1 = np.mean(np.abs(diff))
    grad = (1.0 - dssim) * np.sign(diff) / diff.size
    value = (1.0 - dssim) * l1
    if dssim > 0:
        s, g_s = ssim_loss_map(pred, gt)
        value += dssim * (1.0 - s) / 2.0
        grad = grad - dssim * 0.5 * g_s
    return float(value), grad


def _variance(x, axis=None):
    return np.mean((x - np.mean(x, axis=axis, keepdims=True)) ** 2, axis=axis)


def smoke_alpha_loss(smoke: GaussianSet, modality: Modality = Modality.RGB):
    """Population variance of smoke opacities in ``modality``."""
    n = len(smoke)
    grads = {"opacity_logits": np.zeros(n), "opacity_gaps": np.zeros(n)}
    if n == 0:
        return 0.0, grads
    modality = Modality(modality)
    alpha = smoke.opacity(modality)
    value = _variance(alpha)
    g_alpha = 2.0 * (alpha - alpha.mean()) / n
    dsig = alpha * (1.0 - alpha)
    grads["opacity_logits"] = g_alpha * dsig
    if modality is Modality.THERMAL and smoke.is_smoke:
        grads["opacity_gaps"] = -g_alpha * dsig * sigmoid(smoke.opacity_gaps)
    return float(value), grads


def _dc_color(smoke: GaussianSet):
    # unclamped degree-0 color, so the priors stay smooth
    return smoke.sh_rgb[:, 0, :] * C0 + 0.5


def smoke_color_loss(smoke: GaussianSet):
    """Population variance across primitives of the base RGB color, averaged
    over channels."""
    n = len(smoke)
    g = np.zeros_like(smoke.sh_rgb)
    if n == 0:
        return 0.0, {"sh_rgb": g}
    c = _dc_color(smoke)
    value = np.mean(_variance(c, axis=0))
    g[:, 0, :] = 2.0 * (c - c.mean(axis=0)) / (n * 3) * C0
    return float(value), {"sh_rgb": g}


def mono_loss(smoke: GaussianSet):
    """Mean over primitives of the variance of (R, G, B)."""
    n = len(smoke)
    g = np.zeros_like(smoke.sh_rgb)
    if n == 0:
        return 0.0, {"sh_rgb": g}
    c = _dc_color(smoke)
    value = np.mean(_variance(c, axis=1))
    g[:, 0, :] = 2.0 * (c - c.mean(axis=1, keepdims=True)) / (3 * n) * C0
    return float(value), {"sh_rgb": g}


def depth_loss(rendered_depth, target_depth, valid_mask):
    """Mean absolute depth error over ``valid_mask`` pixels (0 if none)."""
    rendered_depth, target_depth = _same_shape(rendered_depth, target_depth)
    valid = np.asarray(valid_mask, dtype=bool)
    if valid.shape != rendered_depth.shape:
        raise InvalidParameterError("valid mask shape mismatch")
    valid = valid & np.isfinite(target_depth)
    grad = np.zeros_like(rendered_depth)
    count = int(valid.sum())
    if count == 0:
        return 0.0, grad
    diff = rendered_depth[valid] - target_depth[valid]
    grad[valid] = np.sign(diff) / count
    return float(np.mean(np.abs(diff))), grad


def depth_valid_mask(accumulation, target_depth, threshold: float = 0.5):
    return (np.asarray(accumulation) > threshold) & np.isfinite(target_depth)


def mask_loss(pred_accum, gt_mask):
    """Mean L1 between the smoke accumulation map and the smoke mask."""
    pred_accum, gt_mask = _same_shape(pred_accum, gt_mask)
    diff = pred_accum - gt_mask
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def total_loss(terms: dict, weights: LossWeights):
    """Weighted sum of ``terms`` (name -> (value, grads)).

    Gradients are scaled by their weight and summed per key; ``grads`` may be
    an array (keyed by the term name) or a dict of arrays.
    """
    total = 0.0
    agg = {}
    for name, (value, grads) in terms.items():
        if not np.isfinite(value):
            raise TrainingDivergence(name)
        w = weights.weight(name)
        total += w * value
        items = grads.items() if isinstance(grads, dict) else [(name, grads)]
        for key, g in items:
            contrib = w * np.asarray(g)
            agg[key] = contrib if key not in agg else agg[key] + contrib
    return float(total), agg
