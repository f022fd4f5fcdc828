from __future__ import annotations

import numpy as np

from ..core.types import GaussianSet, Modality
from ..metrics import psnr, ssim
from ..render import RenderMode, render


def evaluate_clear(surface: GaussianSet, frames, split: str | None = "test",
                   modality: Modality = Modality.RGB) -> dict:
    """PSNR / SSIM of SURFACE_ONLY renders against the clear references."""
    modality = Modality(modality)
    rows = []
    for f in frames:
        if f.modality is not modality or f.clear is None:
            continue
        if split is not None and f.split != split:
            continue
        img = np.clip(render(surface, f.camera, f.time, RenderMode.SURFACE_ONLY).color, 0.0, 1.0)
        rows.append(dict(frame=f.name, time=f.time, psnr=psnr(img, f.clear), ssim=ssim(img, f.clear)))
    return dict(modality=modality.value, split=split or "all", frames=rows,
                mean_psnr=float(np.mean([r["psnr"] for r in rows])) if rows else float("nan"),
                mean_ssim=float(np.mean([r["ssim"] for r in rows])) if rows else float("nan"))
