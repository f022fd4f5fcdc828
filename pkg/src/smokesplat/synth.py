"""Procedural desk scene with drifting smoke blobs and posed RGB + thermal
frames rendered by the same splatting engine."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core.geometry import look_at, rotmat_to_quat
from .core.io import frame_record, write_manifest, write_pfm, write_ply, write_png
from .core.sh import rgb_to_sh0
from .core.types import Camera, FrameBundle, GaussianSet, Modality, SetKind, logit, softplus_inv
from .errors import ConfigError
from .render import RenderMode, render

TEST_EVERY = 8
THERMAL_BASELINE = 0.06  # thermal camera offset to the right of the RGB camera


@dataclass
class SmokeSpec:
    blobs: int = 3
    per_blob: int = 80
    radius: float = 0.3
    splat_scale: float = 0.1
    drift: list = field(default_factory=lambda: [0.35, 0.0, 0.15])
    growth: float = 0.5
    opacity_rgb: float = 0.35
    opacity_thermal: float = 0.006
    gray: float = 0.8
    thermal_level: float = 0.35
    opacity_jitter: float = 0.0   # > 0 adds smooth per-primitive opacity flicker

    def validate(self):
        if self.blobs < 0 or self.per_blob <= 0:
            raise ConfigError("smoke needs a non-negative blob count and positive per_blob")
        if not 0.0 < self.opacity_thermal < self.opacity_rgb < 1.0:
            raise ConfigError("smoke opacities need 0 < opacity_thermal < opacity_rgb < 1")
        if self.radius <= 0 or self.splat_scale <= 0:
            raise ConfigError("smoke radius and splat_scale must be positive")


@dataclass
class SceneSpec:
    seed: int = 0
    n_frames: int = 60
    rgb_size: int = 128
    thermal_size: int = 96
    orbit_radius: float = 3.4
    orbit_height: float = 1.7
    orbit_arc: float = 1.2          # radians swept over the sequence
    fov: float = 1.0                # horizontal field of view, radians
    spacing: float = 0.08           # surface sample spacing
    point_fraction: float = 0.5     # share of surface centers emitted as point hints
    point_noise: float = 0.02
    smoke: SmokeSpec = field(default_factory=SmokeSpec)

    def __post_init__(self):
        if isinstance(self.smoke, dict):
            self.smoke = SmokeSpec(**self.smoke)
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if self.rgb_size < 16 or self.thermal_size < 16:
            raise ConfigError("image sizes must be at least 16 pixels")
        if self.spacing <= 0:
            raise ConfigError("spacing must be positive")
        self.smoke.validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None


SCENE_AABB = np.array([[-2.0, -2.0, 0.0], [2.0, 1.5, 2.5]])
TARGET = np.array([0.0, 0.2, 0.6])


# ---------------------------------------------------------------------------
# surface


def _plane(origin, u, v, nu, nv, spacing, normal):
    a = (np.arange(nu) + 0.5) * spacing
    b = (np.arange(nv) + 0.5) * spacing
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = origin + A.reshape(-1, 1) * u + B.reshape(-1, 1) * v
    frame = np.stack([u, v, normal], axis=1)  # columns: local axes in world
    return pts, np.tile(rotmat_to_quat(frame), (len(pts), 1))


def _box_faces(lo, hi, spacing):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size = hi - lo
    out = []
    ex, ey, ez = np.eye(3)
    n = lambda L: max(1, int(round(L / spacing)))  # noqa: E731
    # top, front (-y), back (+y), left (-x), right (+x)
    specs = [
        (np.array([lo[0], lo[1], hi[2]]), ex, ey, size[0], size[1], ez),
        (np.array([lo[0], lo[1], lo[2]]), ex, ez, size[0], size[2], -ey),
        (np.array([lo[0], hi[1], lo[2]]), ex, ez, size[0], size[2], ey),
        (np.array([lo[0], lo[1], lo[2]]), ey, ez, size[1], size[2], -ex),
        (np.array([hi[0], lo[1], lo[2]]), ey, ez, size[1], size[2], ex),
    ]
    for origin, u, v, lu, lv, normal in specs:
        nu, nv = n(lu), n(lv)
        pts, q = _plane(origin, u * lu / (nu * spacing), v * lv / (nv * spacing), nu, nv,
                        spacing, normal)
        out.append((pts, q))
    return out


def _rgb_texture(p, part):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if part == "floor":
        checker = (np.floor(x / 0.4) + np.floor(y / 0.4)) % 2
        base = np.where(checker[:, None] > 0, [0.55, 0.38, 0.22], [0.78, 0.62, 0.42])
        return base * (0.9 + 0.1 * np.sin(6 * x))[:, None]
    if part == "wall":
        stripe = 0.5 + 0.5 * np.sin(np.pi * x / 0.5)
        return np.stack([0.3 + 0.4 * stripe, 0.5 + 0.1 * np.cos(2 * z), 0.75 - 0.3 * stripe], axis=1)
    if part == "box_a":
        return np.tile([0.8, 0.15, 0.12], (len(p), 1)) * (0.85 + 0.15 * np.sin(10 * z))[:, None]
    return np.tile([0.1, 0.55, 0.25], (len(p), 1)) * (0.85 + 0.15 * np.cos(10 * (x + y)))[:, None]


def _thermal_field(p, part):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if part == "box_a":
        return 0.85 - 0.1 * z
    if part == "box_b":
        return 0.65 + 0.05 * np.sin(3 * x)
    hot = np.exp(-((x + 0.5) ** 2 + (y - 0.1) ** 2) / 0.8)
    base = 0.25 + 0.1 * z / 2.5 if part == "wall" else 0.3
    return base + 0.25 * hot


def gen_surface(spec: SceneSpec) -> GaussianSet:
    s = spec.spacing
    ex, ey, ez = np.eye(3)
    (lo, hi) = SCENE_AABB
    parts = []
    nfx, nfy = int(round((hi[0] - lo[0]) / s)), int(round((hi[1] - lo[1]) / s))
    parts.append(("floor",) + _plane(np.array([lo[0], lo[1], 0.0]), ex, ey, nfx, nfy, s, ez))
    nwx, nwz = nfx, int(round((hi[2] - lo[2]) / s))
    parts.append(("wall",) + _plane(np.array([lo[0], hi[1], 0.0]), ex, ez, nwx, nwz, s, -ey))
    for name, blo, bhi in (("box_a", (-0.9, -0.1, 0.0), (-0.3, 0.5, 0.6)),
                           ("box_b", (0.3, 0.3, 0.0), (0.9, 0.8, 0.9))):
        for pts, q in _box_faces(blo, bhi, s):
            parts.append((name, pts, q))

    pos = np.concatenate([p for _, p, _ in parts])
    rot = np.concatenate([q for _, _, q in parts])
    rgb = np.concatenate([_rgb_texture(p, n) for n, p, _ in parts])
    thermal = np.concatenate([_thermal_field(p, n) for n, p, _ in parts])
    n = len(pos)
    log_scales = np.tile(np.log([0.6 * s, 0.6 * s, 0.005]), (n, 1))
    sh_rgb = np.zeros((n, 16, 3))
    sh_rgb[:, 0] = rgb_to_sh0(rgb)
    sh_thermal = rgb_to_sh0(thermal)[:, None, None]
    extent = 1.1 * spec.orbit_radius
    return GaussianSet(kind=SetKind.SURFACE, positions=pos, rotations=rot, log_scales=log_scales,
                       opacity_logits=np.full(n, logit(0.95)), sh_rgb=sh_rgb,
                       sh_thermal=sh_thermal, scene_extent=extent)


# ---------------------------------------------------------------------------
# smoke


@dataclass
class SmokeTrajectory:
    """Closed-form smoke: blob centers c0 + v t, radii r0 (1 + growth t)."""

    centers0: np.ndarray      # (B, 3)
    offsets: np.ndarray       # (B, K, 3) unit-radius offsets
    radius: float
    splat_scale: float
    drift: np.ndarray
    growth: float
    opacity_rgb: float
    opacity_thermal: float
    gray: float
    thermal_level: float
    jitter: float
    phases: np.ndarray        # (B, K)
    scene_extent: float

    def centers(self, t: float):
        return self.centers0 + self.drift * t

    def blob_radius(self, t: float) -> float:
        return self.radius * (1.0 + self.growth * t)

    def at(self, t: float) -> GaussianSet:
        B, K, _ = self.offsets.shape
        grow = 1.0 + self.growth * t
        pos = (self.centers(t)[:, None, :] + self.offsets * self.radius * grow).reshape(-1, 3)
        n = B * K
        lrgb = logit(self.opacity_rgb)
        if self.jitter > 0:
            lrgb = lrgb + self.jitter * np.sin(2 * np.pi * (t + self.phases.reshape(-1)))
        lrgb = np.broadcast_to(lrgb, (n,)).copy()
        gap = softplus_inv(logit(self.opacity_rgb) - logit(self.opacity_thermal))
        temporal = np.tile([-1.0, float(softplus_inv(0.1 - 1e-3)), float(softplus_inv(3.0)),
                            float(softplus_inv(0.1 - 1e-3))], (n, 1))
        return GaussianSet(
            kind=SetKind.SMOKE, positions=pos, rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
            log_scales=np.full((n, 3), np.log(self.splat_scale * grow)),
            opacity_logits=lrgb, sh_rgb=np.tile(rgb_to_sh0(np.full(3, self.gray)), (n, 1, 1)),
            sh_thermal=np.full((n, 1, 1), rgb_to_sh0(self.thermal_level)),
            scene_extent=self.scene_extent, opacity_gaps=np.full(n, float(gap)),
            temporal=temporal)


def gen_scene(spec: SceneSpec):
    """Ground-truth surface set and smoke trajectory for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    surface = gen_surface(spec)
    sm = spec.smoke
    centers0 = np.stack([rng.uniform(-0.9, 0.3, sm.blobs), rng.uniform(-1.0, -0.3, sm.blobs),
                         rng.uniform(0.5, 1.1, sm.blobs)], axis=1)
    offsets = rng.normal(size=(sm.blobs, sm.per_blob, 3)) * 0.5
    smoke = SmokeTrajectory(
        centers0=centers0, offsets=offsets, radius=sm.radius, splat_scale=sm.splat_scale,
        drift=np.asarray(sm.drift, dtype=np.float64), growth=sm.growth,
        opacity_rgb=sm.opacity_rgb, opacity_thermal=sm.opacity_thermal, gray=sm.gray,
        thermal_level=sm.thermal_level, jitter=sm.opacity_jitter,
        phases=rng.uniform(size=(sm.blobs, sm.per_blob)), scene_extent=surface.scene_extent)
    return surface, smoke


# ---------------------------------------------------------------------------
# cameras and dataset


def frame_time(spec: SceneSpec, i: int) -> float:
    return i / (spec.n_frames - 1)


def cameras(spec: SceneSpec, i: int):
    """(rgb, thermal) cameras of frame ``i`` on the orbit."""
    theta = spec.orbit_arc * (frame_time(spec, i) - 0.5)
    eye = TARGET + np.array([spec.orbit_radius * np.sin(theta), -spec.orbit_radius * np.cos(theta),
                             spec.orbit_height])
    out = []
    for modality, size, shift in ((Modality.RGB, spec.rgb_size, 0.0),
                                  (Modality.THERMAL, spec.thermal_size, THERMAL_BASELINE)):
        R, _ = look_at(eye, TARGET)
        e = eye + shift * R[0]
        R, t = look_at(e, TARGET + shift * R[0])
        f = 0.5 * size / np.tan(0.5 * spec.fov)
        c = 0.5 * (size - 1)
        out.append(Camera(fx=f, fy=f, cx=c, cy=c, width=size, height=size, rotation=R,
                          translation=t, modality=modality))
    return tuple(out)


def split_of(i: int) -> str:
    return "test" if i % TEST_EVERY == TEST_EVERY // 2 else "train"


def _depth_target(out):
    return np.where(out.accumulation >= 0.5, out.depth, np.inf)


def render_frames(spec: SceneSpec, surface: GaussianSet, smoke: SmokeTrajectory, i: int):
    """RGB and thermal FrameBundles of frame ``i`` with masks, depth and clear images."""
    t = frame_time(spec, i)
    smoke_t = smoke.at(t)
    frames = []
    for cam in cameras(spec, i):
        full = render([surface, smoke_t], cam, t, RenderMode.COMBINED)
        clear = render([surface, smoke_t], cam, t, RenderMode.SURFACE_ONLY)
        mask = depth = None
        if cam.modality is Modality.RGB:
            acc = render([smoke_t], cam, t, RenderMode.SMOKE_ONLY).accumulation
            mask = (acc >= 0.5).astype(np.float64)
        else:
            depth = _depth_target(clear)
        name = f"{cam.modality.value}_{i:04d}"
        frames.append(FrameBundle(camera=cam, image=np.clip(full.color, 0, 1), time=t, mask=mask,
                                  depth=depth, clear=np.clip(clear.color, 0, 1),
                                  split=split_of(i), name=name))
    return frames


def point_hints(spec: SceneSpec, surface: GaussianSet):
    rng = np.random.default_rng(spec.seed + 7)
    n = len(surface)
    keep = np.sort(rng.choice(n, size=max(1, int(spec.point_fraction * n)), replace=False))
    return surface.positions[keep] + rng.normal(scale=spec.point_noise, size=(len(keep), 3))


def gen_dataset(scene, spec: SceneSpec, out_dir) -> Path:
    """Write images, masks, depth maps, clear references, point hints and the
    manifest; returns the manifest path."""
    surface, smoke = scene
    out = Path(out_dir)
    for sub in ("rgb", "thermal", "clear", "mask", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.n_frames):
        for fr in render_frames(spec, surface, smoke, i):
            m = fr.modality.value
            image = f"{m}/{i:04d}.png"
            clear = f"clear/{m}_{i:04d}.png"
            write_png(out / image, fr.image)
            write_png(out / clear, fr.clear)
            mask = depth = None
            if fr.mask is not None:
                mask = f"mask/{i:04d}.png"
                write_png(out / mask, fr.mask)
            if fr.depth is not None:
                depth = f"depth/{i:04d}.pfm"
                write_pfm(out / depth, fr.depth)
            records.append(frame_record(fr, image, mask=mask, depth=depth, clear=clear))
    pts = point_hints(spec, surface)
    write_ply(out / "points.ply", {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2]})
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=1))
    return write_manifest(out / "manifest.json", records, SCENE_AABB, points="points.ply",
                          extra={"generator": {"seed": spec.seed}})
