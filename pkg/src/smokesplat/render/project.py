"""EWA projection of Gaussian sets into screen-space splats (forward + backward)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.geometry import (quat_normalize, quat_normalize_backward, quat_to_rotmat,
                             quat_to_rotmat_backward)
from ..core.sh import degree_from_coeffs, eval_sh_with_grad
from ..core.types import Camera, GaussianPrimitive, GaussianSet, Modality, SetKind, sigmoid, softplus
from ..deform import DeformationField, DeformEval, temporal_multiplier
from ..errors import InvalidParameterError

DILATION = 0.3
NEAR_FRACTION = 0.01


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int
    source_set: SetKind


class ProjectedSet:
    """Screen-space quantities for every primitive of one set.

    ``visible`` marks primitives in front of the near plane; the rest carry
    placeholder values and never reach the rasterizer.
    """

    def __init__(self, gset: GaussianSet, cam: Camera, time: float,
                 deform: DeformationField | None = None, deformed: DeformEval | None = None):
        modality = cam.modality
        sh = gset.sh(modality)
        if sh.shape[1] == 0:
            raise InvalidParameterError(
                f"{gset.kind.value} set has no SH coefficients for {modality.value} cameras")
        if deform is not None and not gset.is_smoke:
            raise InvalidParameterError("deformation applies to smoke sets only")
        self.gset, self.cam, self.time, self.deform = gset, cam, float(time), deform
        n = len(gset)
        self.n = n

        pos, logs, quat = gset.positions, gset.log_scales, gset.rotations
        self.deformed = None
        if deform is not None and n:
            if (deformed is None or deformed.field is not deform or deformed.t != float(time)
                    or deformed.positions is not pos):
                deformed = DeformEval(deform, pos, time)
            self.deformed = deformed
            dpos, dlogs, dquat = deformed.offsets
            pos, logs, quat = pos + dpos, logs + dlogs, quat + dquat
        self.pos_w, self.logs_w, self.quat_w = pos, logs, quat

        Rc, tc = cam.rotation, cam.translation
        pc = pos @ Rc.T + tc
        self.pc = pc
        z = pc[:, 2]
        self.visible = z > NEAR_FRACTION * gset.scene_extent
        zs = np.where(self.visible, z, 1.0)
        x, y = pc[:, 0], pc[:, 1]
        self.zs = zs

        self.unit_q = quat_normalize(quat) if n else quat
        R = quat_to_rotmat(self.unit_q)
        self.R = R
        self.s2 = np.exp(2.0 * logs)
        sigma = (R * self.s2[:, None, :]) @ np.swapaxes(R, 1, 2)
        self.sigma = sigma

        fx, fy = cam.fx, cam.fy
        J = np.zeros((n, 2, 3))
        J[:, 0, 0] = fx / zs
        J[:, 0, 2] = -fx * x / zs ** 2
        J[:, 1, 1] = fy / zs
        J[:, 1, 2] = -fy * y / zs ** 2
        M = J @ Rc
        self.M = M
        cov2d = M @ sigma @ np.swapaxes(M, 1, 2)
        cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
        cov2d[:, 0, 0] += DILATION
        cov2d[:, 1, 1] += DILATION
        self.cov2d = cov2d
        det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
        self.conic = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det,
                               cov2d[:, 0, 0] / det], axis=1)
        self.mean2d = np.stack([fx * x / zs + cam.cx, fy * y / zs + cam.cy], axis=1)
        self.depth = z

        degree = degree_from_coeffs(sh.shape[1])
        self.color, self._sh_backward = eval_sh_with_grad(sh, degree, pos - cam.center)

        # opacity
        if gset.is_smoke and modality is Modality.THERMAL:
            lg = gset.opacity_logits - softplus(gset.opacity_gaps)
        else:
            lg = gset.opacity_logits
        self.base_opacity = sigmoid(lg)
        if gset.is_smoke:
            self.mult, self.mult_grad = temporal_multiplier(gset.temporal, self.time, with_grad=True)
        else:
            self.mult, self.mult_grad = np.ones(n), None
        self.opacity = self.base_opacity * self.mult

    def splat(self, i: int) -> Splat2D | None:
        if not self.visible[i]:
            return None
        return Splat2D(self.mean2d[i].copy(), self.cov2d[i].copy(), float(self.depth[i]),
                       i, self.gset.kind)

    def backward(self, g_mean, g_conic, g_color, g_opac, g_depth, defer_deform=False):
        """Parameter gradients from screen-space gradients (all shape (N, ...)).

        Returns ``(grads, deform_grads)``; ``deform_grads`` is None when no
        field was used. With ``defer_deform`` it is instead the upstream
        ``(g_dpos, g_dlog_scale, g_dquat)`` triple, and positions exclude the
        path through the field.
        """
        gset, cam = self.gset, self.cam
        vis = self.visible[:, None]
        g_mean = np.where(vis, g_mean, 0.0)
        g_conic = np.where(vis, g_conic, 0.0)
        g_color = np.where(vis, g_color, 0.0)
        g_opac = np.where(self.visible, g_opac, 0.0)
        g_depth = np.where(self.visible, g_depth, 0.0)

        fx, fy = cam.fx, cam.fy
        Rc = cam.rotation
        zs = self.zs
        x, y = self.pc[:, 0], self.pc[:, 1]

        # conic -> cov2d:  dL/dCov = -K G K
        a, b, c = self.conic[:, 0], self.conic[:, 1], self.conic[:, 2]
        K = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
        Gk = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], -1),
                       np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], -1)], -2)
        g_cov = -K @ Gk @ K
        # cov2d = M Sigma M^T
        g_M = 2.0 * g_cov @ self.M @ self.sigma
        g_sigma = np.swapaxes(self.M, 1, 2) @ g_cov @ self.M
        g_J = g_M @ Rc.T

        g_pc = np.zeros((self.n, 3))
        z2, z3 = zs ** 2, zs ** 3
        g_pc[:, 0] = g_J[:, 0, 2] * (-fx / z2) + g_mean[:, 0] * fx / zs
        g_pc[:, 1] = g_J[:, 1, 2] * (-fy / z2) + g_mean[:, 1] * fy / zs
        g_pc[:, 2] = (g_J[:, 0, 0] * (-fx / z2) + g_J[:, 0, 2] * (2 * fx * x / z3)
                      + g_J[:, 1, 1] * (-fy / z2) + g_J[:, 1, 2] * (2 * fy * y / z3)
                      - g_mean[:, 0] * fx * x / z2 - g_mean[:, 1] * fy * y / z2
                      + g_depth)
        g_pos_w = g_pc @ Rc

        # Sigma = R D R^T
        GR = g_sigma @ self.R
        g_R = 2.0 * GR * self.s2[:, None, :]
        g_logs_w = 2.0 * self.s2 * np.einsum("nik,nik->nk", self.R, GR)
        g_quat_w = quat_normalize_backward(self.quat_w, quat_to_rotmat_backward(self.unit_q, g_R))

        g_sh, g_dir = self._sh_backward(g_color)
        g_pos_w = g_pos_w + g_dir

        grads = {name: np.zeros_like(arr) for name, arr in gset.params().items()}
        grads["sh_rgb" if cam.modality is Modality.RGB else "sh_thermal"] = g_sh
        grads["log_scales"] = g_logs_w
        grads["rotations"] = g_quat_w
        grads["positions"] = g_pos_w

        # opacity = sigmoid(logit [- softplus(gap)]) * m(t)
        g_base = g_opac * self.mult
        dsig = self.base_opacity * (1.0 - self.base_opacity)
        grads["opacity_logits"] = g_base * dsig
        if gset.is_smoke:
            if cam.modality is Modality.THERMAL:
                grads["opacity_gaps"] = -g_base * dsig * sigmoid(gset.opacity_gaps)
            grads["temporal"] = (g_opac * self.base_opacity)[:, None] * self.mult_grad

        deform_grads = None
        if self.deformed is not None:
            if defer_deform:
                return grads, (g_pos_w, g_logs_w, g_quat_w)
            deform_grads, g_canon = self.deformed.backward(g_pos_w, g_logs_w, g_quat_w)
            grads["positions"] = g_pos_w + g_canon
        return grads, deform_grads


def project_gaussian(g: GaussianPrimitive, cam: Camera, time: float = 0.0,
                     deform: DeformationField | None = None,
                     scene_extent: float = 1.0) -> Splat2D | None:
    """Project one primitive; returns None when it is culled by the near plane."""
    kind = SetKind.SMOKE if g.temporal is not None else SetKind.SURFACE
    gset = GaussianSet.from_primitives(kind, [g], scene_extent=scene_extent)
    return ProjectedSet(gset, cam, time, deform).splat(0)
