"""Domain types: Gaussian sets, cameras, frames and render outputs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError
from .sh import degree_from_coeffs, num_coeffs

MIN_WIDTH = 1e-3


class SetKind(str, enum.Enum):
    SURFACE = "surface"
    SMOKE = "smoke"


class Modality(str, enum.Enum):
    RGB = "rgb"
    THERMAL = "thermal"

    @property
    def channels(self) -> int:
        return 3 if self is Modality.RGB else 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass
class GaussianPrimitive:
    """A single anisotropic Gaussian in user-facing units.

    ``temporal`` holds ``t_appear``, ``width_appear``, ``t_disappear`` and
    ``width_disappear`` for smoke primitives and is ``None`` otherwise.
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit_rgb: float
    opacity_logit_thermal: float
    sh_rgb: np.ndarray
    sh_thermal: np.ndarray
    temporal: dict | None = None


# Per-set parameter arrays; ``opacity_gaps`` and ``temporal`` are smoke-only.
PARAM_NAMES = ("positions", "rotations", "log_scales", "opacity_logits",
               "opacity_gaps", "sh_rgb", "sh_thermal", "temporal")


@dataclass
class GaussianSet:
    """Structure-of-arrays collection of Gaussians of one kind.

    Smoke thermal opacity is ``sigmoid(opacity_logits - softplus(opacity_gaps))``
    so it can never exceed the RGB opacity. ``temporal`` stores, per row,
    ``(t_appear, width_appear_raw, span_raw, width_disappear_raw)`` where widths
    are ``1e-3 + softplus(raw)`` and ``t_disappear = t_appear + softplus(span_raw)``.
    """

    kind: SetKind
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_rgb: np.ndarray
    sh_thermal: np.ndarray
    scene_extent: float = 1.0
    opacity_gaps: np.ndarray | None = None
    temporal: np.ndarray | None = None

    def __post_init__(self):
        self.kind = SetKind(self.kind)
        n = len(self.positions)
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, np.asarray(arr, dtype=np.float64))
        smoke = self.kind is SetKind.SMOKE
        if smoke:
            if self.opacity_gaps is None:
                self.opacity_gaps = np.zeros(n)
            if self.temporal is None:
                raise InvalidParameterError("smoke sets require temporal parameters")
        else:
            if self.opacity_gaps is not None or self.temporal is not None:
                raise InvalidParameterError("surface sets carry no gap/temporal parameters")
        shapes = {"positions": (n, 3), "rotations": (n, 4), "log_scales": (n, 3),
                  "opacity_logits": (n,)}
        if smoke:
            shapes.update(opacity_gaps=(n,), temporal=(n, 4))
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise InvalidParameterError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.sh_rgb.ndim != 3 or self.sh_rgb.shape[0] != n or self.sh_rgb.shape[2] != 3:
            raise InvalidParameterError(f"sh_rgb has shape {self.sh_rgb.shape}")
        if self.sh_thermal.ndim != 3 or self.sh_thermal.shape[0] != n or self.sh_thermal.shape[2] != 1:
            raise InvalidParameterError(f"sh_thermal has shape {self.sh_thermal.shape}")
        for arr in (self.sh_rgb, self.sh_thermal):
            if arr.shape[1]:  # zero coefficients marks an absent modality
                degree_from_coeffs(arr.shape[1])

    # -- construction -----------------------------------------------------
    @classmethod
    def empty(cls, kind, sh_degree_rgb=3, sh_degree_thermal=0, scene_extent=1.0):
        kind = SetKind(kind)
        smoke = kind is SetKind.SMOKE
        return cls(kind=kind, positions=np.zeros((0, 3)), rotations=np.zeros((0, 4)),
                   log_scales=np.zeros((0, 3)), opacity_logits=np.zeros(0),
                   sh_rgb=np.zeros((0, num_coeffs(sh_degree_rgb), 3)),
                   sh_thermal=np.zeros((0, num_coeffs(sh_degree_thermal), 1)),
                   scene_extent=scene_extent,
                   opacity_gaps=np.zeros(0) if smoke else None,
                   temporal=np.zeros((0, 4)) if smoke else None)

    @classmethod
    def from_primitives(cls, kind, primitives, scene_extent=1.0):
        kind = SetKind(kind)
        if not primitives:
            raise InvalidParameterError("use GaussianSet.empty for an empty set")
        smoke = kind is SetKind.SMOKE
        lrgb = np.array([p.opacity_logit_rgb for p in primitives], dtype=np.float64)
        lth = np.array([p.opacity_logit_thermal for p in primitives], dtype=np.float64)
        gaps = temporal = None
        if smoke:
            diff = lrgb - lth
            if np.any(diff < 0):
                raise InvalidParameterError("smoke thermal opacity may not exceed RGB opacity")
            gaps = softplus_inv(np.maximum(diff, 1e-12))
            rows = []
            for p in primitives:
                if p.temporal is None:
                    raise InvalidParameterError("smoke primitive without temporal block")
                tp = p.temporal
                rows.append([tp["t_appear"],
                             softplus_inv(tp["width_appear"] - MIN_WIDTH),
                             softplus_inv(max(tp["t_disappear"] - tp["t_appear"], 1e-12)),
                             softplus_inv(tp["width_disappear"] - MIN_WIDTH)])
            temporal = np.array(rows, dtype=np.float64)
        elif not np.array_equal(lrgb, lth):
            raise InvalidParameterError("surface primitives share one opacity")
        return cls(kind=kind,
                   positions=np.array([p.position for p in primitives], dtype=np.float64),
                   rotations=np.array([p.rotation for p in primitives], dtype=np.float64),
                   log_scales=np.array([p.log_scale for p in primitives], dtype=np.float64),
                   opacity_logits=lrgb,
                   sh_rgb=np.array([p.sh_rgb for p in primitives], dtype=np.float64),
                   sh_thermal=np.array([p.sh_thermal for p in primitives], dtype=np.float64),
                   scene_extent=scene_extent, opacity_gaps=gaps, temporal=temporal)

    # -- accessors --------------------------------------------------------
    def __len__(self):
        return len(self.positions)

    @property
    def is_smoke(self) -> bool:
        return self.kind is SetKind.SMOKE

    @property
    def sh_degree_rgb(self) -> int | None:
        return degree_from_coeffs(self.sh_rgb.shape[1]) if self.sh_rgb.shape[1] else None

    @property
    def sh_degree_thermal(self) -> int | None:
        return degree_from_coeffs(self.sh_thermal.shape[1]) if self.sh_thermal.shape[1] else None

    def param_names(self):
        return [n for n in PARAM_NAMES if getattr(self, n) is not None]

    def params(self) -> dict:
        return {n: getattr(self, n) for n in self.param_names()}

    def sh(self, modality: Modality) -> np.ndarray:
        return self.sh_rgb if Modality(modality) is Modality.RGB else self.sh_thermal

    def thermal_logits(self) -> np.ndarray:
        if self.is_smoke:
            return self.opacity_logits - softplus(self.opacity_gaps)
        return self.opacity_logits

    def opacity(self, modality: Modality) -> np.ndarray:
        """Base (time-independent) opacity for ``modality``."""
        if Modality(modality) is Modality.RGB:
            return sigmoid(self.opacity_logits)
        return sigmoid(self.thermal_logits())

    def temporal_values(self) -> np.ndarray | None:
        """(N, 4) array of t_appear, width_appear, t_disappear, width_disappear."""
        if self.temporal is None:
            return None
        t = self.temporal
        return np.stack([t[:, 0], MIN_WIDTH + softplus(t[:, 1]),
                         t[:, 0] + softplus(t[:, 2]), MIN_WIDTH + softplus(t[:, 3])], axis=1)

    def primitive(self, i: int) -> GaussianPrimitive:
        temporal = None
        if self.is_smoke:
            ta, wa, td, wd = self.temporal_values()[i]
            temporal = dict(t_appear=float(ta), width_appear=float(wa),
                            t_disappear=float(td), width_disappear=float(wd))
        return GaussianPrimitive(
            position=self.positions[i].copy(), rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit_rgb=float(self.opacity_logits[i]),
            opacity_logit_thermal=float(self.thermal_logits()[i]),
            sh_rgb=self.sh_rgb[i].copy(), sh_thermal=self.sh_thermal[i].copy(),
            temporal=temporal)

    def __iter__(self):
        return (self.primitive(i) for i in range(len(self)))

    # -- structural edits -------------------------------------------------
    def copy(self) -> GaussianSet:
        kw = {n: (None if a is None else a.copy()) for n, a in
              ((n, getattr(self, n)) for n in PARAM_NAMES)}
        return GaussianSet(kind=self.kind, scene_extent=self.scene_extent, **kw)

    def with_params(self, params: dict) -> GaussianSet:
        kw = {n: getattr(self, n) for n in PARAM_NAMES}
        kw.update(params)
        return GaussianSet(kind=self.kind, scene_extent=self.scene_extent, **kw)

    def select(self, index) -> GaussianSet:
        return self.with_params({n: a[index] for n, a in self.params().items()})

    def normalize_rotations(self):
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)


@dataclass
class Camera:
    """Pinhole camera. ``rotation``/``translation`` map world to camera
    coordinates (+x right, +y down, +z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    modality: Modality = Modality.RGB

    def __post_init__(self):
        self.modality = Modality(self.modality)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image size must be positive")
        if not (np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.translation))):
            raise InvalidParameterError("non-finite camera pose")
        R = self.rotation
        if (not np.allclose(R @ R.T, np.eye(3), atol=1e-6)
                or abs(np.linalg.det(R) - 1.0) > 1e-6):
            raise InvalidParameterError("camera rotation must be a proper rotation")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def shape(self):
        return (self.height, self.width, self.modality.channels)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width,
                    height=self.height, rotation=self.rotation.tolist(),
                    translation=self.translation.tolist(), modality=self.modality.value)

    @classmethod
    def from_dict(cls, d: dict) -> Camera:
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], width=d["width"],
                   height=d["height"], rotation=d["rotation"], translation=d["translation"],
                   modality=d.get("modality", "rgb"))


@dataclass
class FrameBundle:
    camera: Camera
    image: np.ndarray
    time: float = 0.0
    mask: np.ndarray | None = None
    depth: np.ndarray | None = None
    clear: np.ndarray | None = None
    split: str = "train"
    name: str = ""

    @property
    def modality(self) -> Modality:
        return self.camera.modality

    def validate(self):
        h, w, c = self.camera.shape
        if self.image.shape != (h, w, c):
            raise InvalidParameterError(
                f"image shape {self.image.shape} does not match camera {(h, w, c)}")
        for label in ("mask", "depth"):
            arr = getattr(self, label)
            if arr is not None and arr.shape != (h, w):
                raise InvalidParameterError(f"{label} shape {arr.shape} does not match image {(h, w)}")
        if self.clear is not None and self.clear.shape != (h, w, c):
            raise InvalidParameterError("clear image shape does not match image")
        if not 0.0 <= self.time <= 1.0:
            raise InvalidParameterError(f"time {self.time} outside [0, 1]")


@dataclass
class RenderOutput:
    color: np.ndarray
    accumulation: np.ndarray
    depth: np.ndarray
    final_transmittance: np.ndarray
    extras: dict = field(default_factory=dict, repr=False)
