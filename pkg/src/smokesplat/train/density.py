"""Adaptive density control: clone / split high-gradient Gaussians, prune
transparent ones."""

from __future__ import annotations

import numpy as np

from ..core.geometry import quat_normalize, quat_to_rotmat
from ..core.types import GaussianSet, Modality
from .adam import AdamState
from .config import DensifyConfig


class GradStats:
    """Running mean of screen-space positional gradient norms per primitive."""

    def __init__(self, n: int):
        self.total = np.zeros(n)
        self.count = np.zeros(n)

    def add(self, mean2d_grad, width: int, height: int, visible=None):
        g = mean2d_grad * np.array([0.5 * width, 0.5 * height])
        norm = np.linalg.norm(g, axis=1)
        seen = norm > 0 if visible is None else visible
        self.total[seen] += norm[seen]
        self.count[seen] += 1

    def mean(self):
        return np.where(self.count > 0, self.total / np.maximum(self.count, 1), 0.0)


def densify_and_prune(gset: GaussianSet, stats: GradStats, cfg: DensifyConfig,
                      rng: np.random.Generator, state: AdamState | None = None,
                      prefix: str = "", max_primitives: int | None = None,
                      densify: bool = True) -> GaussianSet:
    """Returns the edited set; Adam rows under ``prefix`` follow their source rows."""
    n = len(gset)
    if n == 0:
        return gset
    cap = cfg.max_primitives if max_primitives is None else max_primitives
    grads = stats.mean()
    scales = np.exp(gset.log_scales)
    big = scales.max(axis=1) > cfg.percent_dense * gset.scene_extent

    selected = (grads >= cfg.grad_threshold) if densify else np.zeros(n, dtype=bool)
    budget = max(0, cap - n)
    if selected.sum() > budget:
        # keep the strongest gradients within the budget
        cand = np.flatnonzero(selected)
        keep = cand[np.argsort(-grads[cand], kind="stable")[:budget]]
        selected = np.zeros(n, dtype=bool)
        selected[keep] = True
    clone = selected & ~big
    split = selected & big

    opacity = gset.opacity(Modality.RGB)
    survive = opacity >= cfg.min_opacity
    base = np.flatnonzero(~split & survive)
    clones = np.flatnonzero(clone & survive)
    splits = np.flatnonzero(split & survive)
    source = np.concatenate([base, clones, splits, splits])
    out = gset.select(source)

    if len(splits):
        k = len(splits)
        stds = scales[splits]
        R = quat_to_rotmat(quat_normalize(gset.rotations[splits]))
        first = len(base) + len(clones)
        for child in range(2):
            rows = slice(first + child * k, first + (child + 1) * k)
            local = rng.normal(size=(k, 3)) * stds
            out.positions[rows] = gset.positions[splits] + np.einsum("nij,nj->ni", R, local)
            out.log_scales[rows] = gset.log_scales[splits] - np.log(cfg.split_factor)

    if state is not None:
        state.select_rows(prefix, source)
    return out
