"""Stage 2 (thermal-only surface fit) and Stage 3 (joint surface + smoke fit)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..core.io import save_checkpoint
from ..core.sh import num_coeffs
from ..core.types import GaussianSet, Modality, SetKind, logit, softplus_inv
from ..deform import DeformationField, DeformEval
from ..errors import ConfigError, InvalidParameterError, TrainingDivergence
from ..losses import (TERMS, LossWeights, depth_loss, depth_valid_mask, mask_loss, mono_loss,
                      render_loss, smoke_alpha_loss, smoke_color_loss, total_loss)
from ..render import RenderMode, RenderPass
from .adam import AdamState, adam_step
from .config import TrainConfig
from .density import GradStats, densify_and_prune

log = logging.getLogger(__name__)

LOG_COLUMNS = ("stage", "iteration", "frame", "modality") + TERMS + ("total",)


# ---------------------------------------------------------------------------
# scene helpers


def scene_extent_from_frames(frames) -> float:
    """1.1 x the largest camera distance from the mean camera center."""
    centers = np.array([f.camera.center for f in frames])
    return float(1.1 * np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))


def _nn_log_scale(points):
    k = min(4, len(points))
    if k < 2:
        return np.full((len(points), 3), np.log(0.01))
    d, _ = cKDTree(points).query(points, k=k)
    d2 = np.maximum(np.mean(d[:, 1:] ** 2, axis=1), 1e-7)
    return np.repeat(np.log(np.sqrt(d2))[:, None], 3, axis=1)


def _check_aabb(aabb):
    aabb = np.asarray(aabb, dtype=np.float64)
    if aabb.shape != (2, 3) or np.any(aabb[1] - aabb[0] <= 0) or not np.all(np.isfinite(aabb)):
        raise InvalidParameterError(f"degenerate scene bounds {aabb.tolist()}")
    return aabb


def init_surface(points, aabb, config: TrainConfig, scene_extent: float,
                 rng: np.random.Generator) -> GaussianSet:
    """Surface set seeded at the given points, or uniformly in the AABB."""
    if points is None or len(points) == 0:
        aabb = _check_aabb(aabb)
        points = rng.uniform(aabb[0], aabb[1], size=(config.init_points, 3))
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    return GaussianSet(
        kind=SetKind.SURFACE, positions=points.copy(),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=_nn_log_scale(points), opacity_logits=np.full(n, logit(0.1)),
        sh_rgb=np.zeros((n, num_coeffs(config.sh_degree_rgb), 3)),
        sh_thermal=np.zeros((n, num_coeffs(config.sh_degree_thermal), 1)),
        scene_extent=scene_extent)


def init_smoke(config: TrainConfig, scene_extent: float, rng: np.random.Generator,
               aabb=None) -> GaussianSet:
    """Gray, faint smoke Gaussians uniformly inside the bounds, present at all times."""
    si = config.smoke_init
    if si.count <= 0:
        raise InvalidParameterError("smoke count must be positive")
    bounds = si.bounds if si.bounds is not None else aabb
    if bounds is None:
        raise InvalidParameterError("smoke initialization needs scene bounds")
    bounds = _check_aabb(bounds)
    n = si.count
    pos = rng.uniform(bounds[0], bounds[1], size=(n, 3))
    lrgb = logit(si.opacity_rgb)
    gap = softplus_inv(lrgb - logit(si.opacity_thermal))
    temporal = np.tile([0.0, float(softplus_inv(0.1 - 1e-3)), float(softplus_inv(1.0)),
                        float(softplus_inv(0.1 - 1e-3))], (n, 1))
    return GaussianSet(
        kind=SetKind.SMOKE, positions=pos, rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=_nn_log_scale(pos), opacity_logits=np.full(n, lrgb),
        sh_rgb=np.zeros((n, 1, 3)), sh_thermal=np.zeros((n, 1, 1)),
        scene_extent=scene_extent, opacity_gaps=np.full(n, float(gap)), temporal=temporal)


def _position_lr(config: TrainConfig, extent: float, it: int, total: int) -> float:
    lr0 = config.lr.position * extent
    lr1 = config.lr.position_final * extent
    t = min(max(it / max(total, 1), 0.0), 1.0)
    return float(np.exp(np.log(lr0) * (1 - t) + np.log(lr1) * t))


def _set_lrs(prefix: str, gset: GaussianSet, config: TrainConfig, pos_lr: float,
             factor: float = 1.0, sh_rgb_factor: float = 1.0) -> dict:
    lr = config.lr
    out = {f"{prefix}.positions": pos_lr * factor,
           f"{prefix}.rotations": lr.rotation * factor,
           f"{prefix}.log_scales": lr.log_scale * factor,
           f"{prefix}.opacity_logits": lr.opacity * factor}
    for key, f in (("sh_rgb", sh_rgb_factor), ("sh_thermal", factor)):
        d = getattr(gset, key).shape[1]
        rates = np.full((1, d, 1), lr.sh * lr.sh_rest_factor)
        rates[:, 0] = lr.sh
        out[f"{prefix}.{key}"] = rates * f
    if gset.is_smoke:
        out[f"{prefix}.opacity_gaps"] = lr.opacity * factor
        out[f"{prefix}.temporal"] = lr.temporal * factor
    return out


def _params(prefix: str, gset: GaussianSet) -> dict:
    return {f"{prefix}.{k}": v for k, v in gset.params().items()}


def _prefixed(prefix: str, grads: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def _add_into(acc: dict, grads: dict):
    for k, v in grads.items():
        acc[k] = v if k not in acc else acc[k] + v


def _densify_window(config: TrainConfig, it: int, total: int) -> bool:
    d = config.densify
    return (d.start <= it < d.stop_fraction * total) and (it + 1) % d.interval == 0


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for r in self.rows:
            vals = []
            for c in LOG_COLUMNS:
                v = r.get(c, 0.0)
                vals.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def totals(self, stage: int | None = None):
        return np.array([r["total"] for r in self.rows if stage is None or r["stage"] == stage])


# ---------------------------------------------------------------------------
# Stage 2


def run_stage2(frames, config: TrainConfig, points=None, aabb=None,
               training_log: TrainingLog | None = None,
               modality: Modality = Modality.THERMAL) -> GaussianSet:
    """Fit a surface set to single-modality frames with the rendering loss only."""
    modality = Modality(modality)
    frames = [f for f in frames if f.modality is modality and f.split == "train"]
    if len(frames) < 2:
        raise ConfigError(f"stage 2 needs at least two {modality.value} training frames, "
                          f"got {len(frames)}")
    rng = np.random.default_rng(config.seed)
    extent = scene_extent_from_frames(frames)
    surface = init_surface(points, aabb, config, extent, rng)
    state = AdamState()
    stats = GradStats(len(surface))
    iters = config.iterations_stage2
    sh_key = "sh_rgb" if modality is Modality.RGB else "sh_thermal"
    for it in range(iters):
        fi = int(rng.integers(len(frames)))
        frame = frames[fi]
        rp = RenderPass([surface], frame.camera, frame.time, RenderMode.SURFACE_ONLY)
        value, g_img = render_loss(rp.output.color, frame.image, config.weights.dssim)
        if not np.isfinite(value):
            raise TrainingDivergence("render")
        grads = rp.backward(grad_color=config.weights.render * g_img)
        g = grads.sets[0]
        params = _params("surface", surface)
        lrs = _set_lrs("surface", surface, config, _position_lr(config, extent, it, iters))
        step_grads = {f"surface.{k}": v for k, v in g.items()
                      if k in ("positions", "rotations", "log_scales", "opacity_logits", sh_key)}
        adam_step(params, step_grads, state, lrs)
        stats.add(grads.mean2d[0], frame.camera.width, frame.camera.height,
                  visible=rp.projected[0].visible)
        if training_log is not None:
            training_log.append(stage=2, iteration=it, frame=fi, modality=modality.value,
                                render=value, total=config.weights.render * value)
        if _densify_window(config, it, iters):
            surface = densify_and_prune(surface, stats, config.densify, rng, state, "surface.")
            stats = GradStats(len(surface))
    return surface


# ---------------------------------------------------------------------------
# Stage 3


@dataclass
class Stage3Result:
    surface: GaussianSet
    smoke: GaussianSet
    deform: DeformationField
    log: TrainingLog


def _prepare_stage3_surface(surface: GaussianSet, config: TrainConfig) -> GaussianSet:
    surface = surface.copy()
    d = num_coeffs(config.sh_degree_rgb)
    if surface.sh_rgb.shape[1] != d:
        sh = np.zeros((len(surface), d, 3))
        k = min(d, surface.sh_rgb.shape[1])
        sh[:, :k] = surface.sh_rgb[:, :k]
        surface = surface.with_params({"sh_rgb": sh})
    return surface


def run_stage3(frames, surface_init: GaussianSet, config: TrainConfig, aabb=None,
               training_log: TrainingLog | None = None, checkpoint_dir=None) -> Stage3Result:
    """Jointly fit surface, smoke and the deformation field on RGB + thermal frames."""
    weights: LossWeights = config.weights
    frames = [f for f in frames if f.split == "train"]
    if config.rgb_only:
        frames = [f for f in frames if f.modality is Modality.RGB]
    if not frames:
        raise ConfigError("stage 3 has no training frames")
    rng = np.random.default_rng(config.seed + 1)
    training_log = training_log if training_log is not None else TrainingLog()
    extent = surface_init.scene_extent
    surface = _prepare_stage3_surface(surface_init, config)
    if config.smoke_init.count == 0:
        # degenerate run: no smoke, continued surface fitting
        smoke = GaussianSet.empty(SetKind.SMOKE, 0, 0, extent)
    else:
        smoke = init_smoke(config, extent, rng, aabb)
    dc = config.deform
    deform = DeformationField.init(rng, dc.depth, dc.width, dc.L_pos, dc.L_time)
    state = AdamState()
    s_stats, k_stats = GradStats(len(surface)), GradStats(len(smoke))
    iters = config.iterations_stage3
    alpha_modality = Modality(config.smoke_alpha_modality)
    use_depth = weights.depth > 0 and not config.rgb_only

    def snapshot():
        if checkpoint_dir is not None:
            save_checkpoint([surface, smoke], deform, checkpoint_dir)

    for it in range(iters):
        fi = int(rng.integers(len(frames)))
        frame = frames[fi]
        cam = frame.camera
        values = dict.fromkeys(TERMS, 0.0)
        terms = {}

        ev = DeformEval(deform, smoke.positions, frame.time) if len(smoke) else None
        main = RenderPass([surface, smoke], cam, frame.time, RenderMode.COMBINED, deform, ev)
        v, g = render_loss(main.output.color, frame.image, weights.dssim)
        terms["render"] = (v, {"combined.color": g})

        smoke_pass = None
        if weights.mask > 0 and frame.mask is not None and frame.modality is Modality.RGB:
            smoke_pass = RenderPass([smoke], cam, frame.time, RenderMode.SMOKE_ONLY, deform, ev)
            v, g = mask_loss(smoke_pass.output.accumulation, frame.mask)
            terms["mask"] = (v, {"smoke_only.accum": g})

        surf_pass = None
        if use_depth and frame.depth is not None and frame.modality is Modality.THERMAL:
            surf_pass = RenderPass([surface], cam, frame.time, RenderMode.SURFACE_ONLY)
            valid = depth_valid_mask(surf_pass.output.accumulation, frame.depth)
            v, g = depth_loss(surf_pass.output.depth, np.nan_to_num(frame.depth, nan=0.0,
                                                                    posinf=0.0, neginf=0.0), valid)
            terms["depth"] = (v, {"surface_only.depth": g})

        if weights.smoke_alpha > 0:
            v, g = smoke_alpha_loss(smoke, alpha_modality)
            terms["smoke_alpha"] = (v, _prefixed("smoke", g))
        if weights.smoke_color > 0:
            v, g = smoke_color_loss(smoke)
            terms["smoke_color"] = (v, _prefixed("smoke", g))
        if weights.mono > 0:
            v, g = mono_loss(smoke)
            terms["mono"] = (v, _prefixed("smoke", g))

        try:
            total, agg = total_loss(terms, weights)
        except TrainingDivergence:
            snapshot()
            raise
        for k, (v, _) in terms.items():
            values[k] = v

        grads = {}
        rg = main.backward(grad_color=agg.pop("combined.color"), defer_deform=True)
        _add_into(grads, _prefixed("surface", rg.sets[0]))
        _add_into(grads, _prefixed("smoke", rg.sets[1]))
        upstream = [rg.deform_upstream[1]]
        s_stats.add(rg.mean2d[0], cam.width, cam.height, visible=main.projected[0].visible)
        k_stats.add(rg.mean2d[1], cam.width, cam.height, visible=main.projected[1].visible)
        if smoke_pass is not None:
            sg = smoke_pass.backward(grad_accum=agg.pop("smoke_only.accum"), defer_deform=True)
            _add_into(grads, _prefixed("smoke", sg.sets[0]))
            upstream.append(sg.deform_upstream[0])
        if surf_pass is not None:
            dg = surf_pass.backward(grad_depth=agg.pop("surface_only.depth"))
            _add_into(grads, _prefixed("surface", dg.sets[0]))
        _add_into(grads, agg)
        upstream = [u for u in upstream if u is not None]
        if ev is not None and upstream:
            total_up = [sum(parts) for parts in zip(*upstream)]
            deform_grads, g_canon = ev.backward(*total_up)
            grads["smoke.positions"] = grads["smoke.positions"] + g_canon
        else:
            deform_grads = [np.zeros_like(w) for w in deform.weights]
        for i, w in enumerate(deform_grads):
            grads[f"deform.{i}"] = w

        pos_lr = _position_lr(config, extent, it, iters)
        lrs = _set_lrs("surface", surface, config, pos_lr,
                       factor=config.lr.stage3_surface_factor)
        lrs.update(_set_lrs("smoke", smoke, config, pos_lr))
        params = _params("surface", surface)
        params.update(_params("smoke", smoke))
        for i, w in enumerate(deform.weights):
            params[f"deform.{i}"] = w
            lrs[f"deform.{i}"] = config.lr.deform
        if config.rgb_only:
            grads.pop("surface.sh_thermal", None)
        try:
            adam_step(params, grads, state, lrs)
        except TrainingDivergence:
            snapshot()
            raise

        training_log.append(stage=3, iteration=it, frame=fi, modality=frame.modality.value,
                            total=total, **values)

        if _densify_window(config, it, iters):
            surface = densify_and_prune(surface, s_stats, config.densify, rng, state, "surface.")
            smoke = densify_and_prune(smoke, k_stats, config.densify, rng, state, "smoke.",
                                      max_primitives=config.smoke_densify_max)
            s_stats, k_stats = GradStats(len(surface)), GradStats(len(smoke))
        if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            snapshot()
    snapshot()
    return Stage3Result(surface=surface, smoke=smoke, deform=deform, log=training_log)


# ---------------------------------------------------------------------------
# full run


def train(frames, config: TrainConfig, points=None, aabb=None, stage2_only: bool = False,
          surface_init: GaussianSet | None = None, checkpoint_dir=None):
    """Stage 2 then Stage 3. ``surface_init`` skips Stage 2 (e.g. a cached fit);
    with ``stage2_only`` the result carries an empty smoke set and no field.
    The RGB-only baseline fits its Stage 2 to RGB frames."""
    training_log = TrainingLog()
    if surface_init is None:
        modality = Modality.RGB if config.rgb_only else Modality.THERMAL
        surface_init = run_stage2(frames, config, points, aabb, training_log, modality)
    if stage2_only:
        smoke = GaussianSet.empty(SetKind.SMOKE, 0, 0, surface_init.scene_extent)
        if checkpoint_dir is not None:
            save_checkpoint([surface_init, smoke], None, checkpoint_dir)
        return Stage3Result(surface_init, smoke, None, training_log)
    return run_stage3(frames, surface_init, config, aabb, training_log, checkpoint_dir)
