from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from ..errors import ConfigError
from ..losses import LossWeights


@dataclass
class LearningRates:
    position: float = 1.6e-4        # multiplied by scene extent
    position_final: float = 1.6e-6  # end of the exponential decay, times extent
    opacity: float = 0.05
    log_scale: float = 5e-3
    rotation: float = 1e-3
    sh: float = 2.5e-3
    sh_rest_factor: float = 1.0 / 20.0  # higher SH bands, as in the base method
    temporal: float = 5e-3
    deform: float = 8e-4
    stage3_surface_factor: float = 0.1


@dataclass
class DensifyConfig:
    start: int = 500
    stop_fraction: float = 0.5
    interval: int = 100
    grad_threshold: float = 2e-4     # screen-space gradient, normalized device units
    min_opacity: float = 0.005
    percent_dense: float = 0.01      # clone/split boundary, fraction of scene extent
    split_factor: float = 1.6
    max_primitives: int = 6000


@dataclass
class SmokeInit:
    count: int = 5000
    opacity_rgb: float = 0.1
    opacity_thermal: float = 0.01
    bounds: list | None = None       # [[xmin, ymin, zmin], [xmax, ymax, zmax]]; default scene AABB


@dataclass
class DeformConfig:
    depth: int = 4
    width: int = 64
    L_pos: int = 10
    L_time: int = 6


@dataclass
class TrainConfig:
    iterations_stage2: int = 3000
    iterations_stage3: int = 3000
    lr: LearningRates = field(default_factory=LearningRates)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    smoke_init: SmokeInit = field(default_factory=SmokeInit)
    smoke_densify_max: int = 5000
    deform: DeformConfig = field(default_factory=DeformConfig)
    seed: int = 0
    sh_degree_rgb: int = 3
    sh_degree_thermal: int = 0
    init_points: int = 2000          # random init count when no point hints exist
    smoke_alpha_modality: str = "rgb"
    rgb_only: bool = False
    checkpoint_every: int = 0        # 0 disables intermediate checkpoints

    def __post_init__(self):
        if self.iterations_stage2 <= 0 or self.iterations_stage3 <= 0:
            raise ConfigError("iteration counts must be positive")
        for name, v in asdict(self.lr).items():
            if not v > 0:
                raise ConfigError(f"learning rate {name} must be positive")
        if self.smoke_alpha_modality not in ("rgb", "thermal"):
            raise ConfigError("smoke_alpha_modality must be 'rgb' or 'thermal'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return _build(cls, d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        factory = known[name].default_factory
        if isinstance(value, dict) and factory is not MISSING and is_dataclass(factory):
            value = _build(factory, value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
