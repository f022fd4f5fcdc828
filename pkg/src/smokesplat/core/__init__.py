from .geometry import covariance_from_params
from .sh import eval_sh
from .types import (Camera, FrameBundle, GaussianPrimitive, GaussianSet, Modality,
                    RenderOutput, SetKind)

__all__ = ["Camera", "FrameBundle", "GaussianPrimitive", "GaussianSet", "Modality",
           "RenderOutput", "SetKind", "covariance_from_params", "eval_sh"]
