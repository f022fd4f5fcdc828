from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..core.types import Camera, GaussianSet, RenderOutput, SetKind
from ..deform import DeformationField, DeformEval
from ..errors import InvalidParameterError
from . import raster
from .project import ProjectedSet


class RenderMode(str, enum.Enum):
    COMBINED = "combined"
    SURFACE_ONLY = "surface"
    SMOKE_ONLY = "smoke"

    def includes(self, kind: SetKind) -> bool:
        if self is RenderMode.COMBINED:
            return True
        return (kind is SetKind.SURFACE) == (self is RenderMode.SURFACE_ONLY)


@dataclass
class RenderGrads:
    """Gradients aligned with the ``sets`` passed to the renderer.

    ``sets[i]`` is a dict of parameter gradients (zeros for sets the mode
    excluded); ``mean2d[i]`` holds screen-space mean gradients, used by
    density control.
    """

    sets: list
    mean2d: list
    deform: list | None
    deform_upstream: list | None = None


def _as_list(sets):
    if isinstance(sets, GaussianSet):
        return [sets]
    return [s for s in sets if s is not None]


class RenderPass:
    """One forward render that keeps what its backward pass needs."""

    def __init__(self, sets, cam: Camera, time: float = 0.0,
                 mode: RenderMode = RenderMode.COMBINED,
                 deform: DeformationField | None = None, deformed: DeformEval | None = None):
        mode = RenderMode(mode)
        if mode is not RenderMode.SURFACE_ONLY and not 0.0 <= time <= 1.0:
            raise InvalidParameterError(f"time {time} outside [0, 1]")
        self.sets = _as_list(sets)
        self.cam, self.time, self.mode, self.deform = cam, float(time), mode, deform
        self.projected = []
        for s in self.sets:
            if not mode.includes(s.kind):
                self.projected.append(None)
                continue
            d = deform if s.is_smoke else None
            self.projected.append(ProjectedSet(s, cam, time, d, deformed if d is not None else None))

        parts = [(j, p) for j, p in enumerate(self.projected) if p is not None]
        nc = cam.modality.channels
        means = [p.mean2d[p.visible] for _, p in parts]
        self._sources = [(j, np.flatnonzero(p.visible)) for j, p in parts]
        if parts:
            means = np.concatenate(means)
            conics = np.concatenate([p.conic[p.visible] for _, p in parts])
            covs = np.concatenate([p.cov2d[p.visible] for _, p in parts])
            opac = np.concatenate([p.opacity[p.visible] for _, p in parts])
            colors = np.concatenate([p.color[p.visible] for _, p in parts])
            depths = np.concatenate([p.depth[p.visible] for _, p in parts])
        else:
            means, conics, covs = np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 2, 2))
            opac, colors, depths = np.zeros(0), np.zeros((0, nc)), np.zeros(0)
        # stable sort keeps concatenation (set, index) order on ties
        order = np.argsort(depths, kind="stable")
        self.order = order
        self.means = np.ascontiguousarray(means[order])
        self.conics = np.ascontiguousarray(conics[order])
        self.covs = np.ascontiguousarray(covs[order])
        self.opac = np.ascontiguousarray(opac[order])
        self.colors = np.ascontiguousarray(colors[order])
        self.depths = np.ascontiguousarray(depths[order])
        W, H = cam.width, cam.height
        self.ptr, self.idx = raster.bin_splats(self.means, self.covs, self.opac, W, H, raster.TILE)
        color, acc, depth, T, last = raster.composite_forward(
            self.means, self.conics, self.opac, self.colors, self.depths,
            self.ptr, self.idx, W, H, raster.TILE)
        # private copies: callers may edit the output arrays in place
        self._fwd = (acc.copy(), depth.copy(), T.copy(), last)
        self.output = RenderOutput(color=color, accumulation=acc, depth=depth,
                                   final_transmittance=T)

    def backward(self, grad_color=None, grad_accum=None, grad_depth=None,
                 defer_deform: bool = False) -> RenderGrads:
        """Gradients for every set. With ``defer_deform`` the deformation field
        is not back-propagated; ``deform_upstream[i]`` then carries the offset
        gradients of set ``i`` so callers can merge several passes."""
        cam = self.cam
        H, W, C = cam.shape
        grad_color = np.zeros((H, W, C)) if grad_color is None else np.asarray(grad_color, dtype=np.float64)
        grad_accum = np.zeros((H, W)) if grad_accum is None else np.asarray(grad_accum, dtype=np.float64)
        grad_depth = np.zeros((H, W)) if grad_depth is None else np.asarray(grad_depth, dtype=np.float64)
        if grad_color.shape != (H, W, C) or grad_accum.shape != (H, W) or grad_depth.shape != (H, W):
            raise InvalidParameterError("gradient buffers do not match the image size")

        n = len(self.opac)
        buf = raster.composite_backward(
            self.means, self.conics, self.opac, self.colors, self.depths, self.ptr, self.idx,
            W, H, raster.TILE, *self._fwd, np.ascontiguousarray(grad_color),
            np.ascontiguousarray(grad_accum), np.ascontiguousarray(grad_depth))
        g_sorted = raster.reduce_entries(buf, self.idx, n)
        g_all = np.empty_like(g_sorted)
        g_all[self.order] = g_sorted

        set_grads, mean_grads, upstream = [], [], [None] * len(self.sets)
        deform_grads = None
        offset = 0
        src = dict(self._sources)
        for j, (s, p) in enumerate(zip(self.sets, self.projected)):
            if p is None:
                set_grads.append({k: np.zeros_like(v) for k, v in s.params().items()})
                mean_grads.append(np.zeros((len(s), 2)))
                continue
            rows = src[j]
            g = g_all[offset:offset + len(rows)]
            offset += len(rows)
            full = np.zeros((len(s), g.shape[1]))
            full[rows] = g
            grads, dg = p.backward(full[:, 0:2], full[:, 2:5], full[:, raster.GCOLS:],
                                   full[:, 5], full[:, 6], defer_deform=defer_deform)
            set_grads.append(grads)
            mean_grads.append(full[:, 0:2])
            if defer_deform:
                upstream[j] = dg
            elif dg is not None:
                deform_grads = dg if deform_grads is None else [a + b for a, b in zip(deform_grads, dg)]
        if self.deform is not None and deform_grads is None and not defer_deform:
            deform_grads = [np.zeros_like(w) for w in self.deform.weights]
        return RenderGrads(sets=set_grads, mean2d=mean_grads, deform=deform_grads,
                           deform_upstream=upstream if defer_deform else None)


def render(sets, cam: Camera, time: float = 0.0, mode: RenderMode = RenderMode.COMBINED,
           deform: DeformationField | None = None) -> RenderOutput:
    """Composite the sets selected by ``mode`` into an image for ``cam``."""
    return RenderPass(sets, cam, time, mode, deform).output


def render_backward(sets, cam: Camera, time: float, mode: RenderMode, grad_color=None,
                    grad_accum=None, grad_depth=None,
                    deform: DeformationField | None = None) -> RenderGrads:
    """Exact reverse-mode gradients of :func:`render` for the given upstream
    image gradients."""
    return RenderPass(sets, cam, time, mode, deform).backward(grad_color, grad_accum, grad_depth)
