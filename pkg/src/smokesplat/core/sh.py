"""Real spherical harmonics up to degree 3 (splatting sign convention)."""

import numpy as np

from ..errors import InvalidParameterError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def degree_from_coeffs(n: int) -> int:
    d = int(round(np.sqrt(n))) - 1
    if d < 0 or d > 3 or num_coeffs(d) != n:
        raise InvalidParameterError(f"{n} is not a valid SH coefficient count")
    return d


def sh_basis(dirs, degree: int, with_grad: bool = False):
    """Basis values (..., D) for unit directions (..., 3).

    With ``with_grad`` also returns d(basis)/d(dir) of shape (..., D, 3),
    treating x, y, z as independent.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    D = num_coeffs(degree)
    Y = np.empty(dirs.shape[:-1] + (D,))
    dY = np.zeros(dirs.shape[:-1] + (D, 3)) if with_grad else None
    Y[..., 0] = C0
    if degree >= 1:
        Y[..., 1] = -C1 * y
        Y[..., 2] = C1 * z
        Y[..., 3] = -C1 * x
        if with_grad:
            dY[..., 1, 1] = -C1
            dY[..., 2, 2] = C1
            dY[..., 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        Y[..., 4] = C2[0] * x * y
        Y[..., 5] = C2[1] * y * z
        Y[..., 6] = C2[2] * (2 * zz - xx - yy)
        Y[..., 7] = C2[3] * x * z
        Y[..., 8] = C2[4] * (xx - yy)
        if with_grad:
            dY[..., 4, 0] = C2[0] * y
            dY[..., 4, 1] = C2[0] * x
            dY[..., 5, 1] = C2[1] * z
            dY[..., 5, 2] = C2[1] * y
            dY[..., 6, 0] = -2 * C2[2] * x
            dY[..., 6, 1] = -2 * C2[2] * y
            dY[..., 6, 2] = 4 * C2[2] * z
            dY[..., 7, 0] = C2[3] * z
            dY[..., 7, 2] = C2[3] * x
            dY[..., 8, 0] = 2 * C2[4] * x
            dY[..., 8, 1] = -2 * C2[4] * y
    if degree >= 3:
        Y[..., 9] = C3[0] * y * (3 * xx - yy)
        Y[..., 10] = C3[1] * x * y * z
        Y[..., 11] = C3[2] * y * (4 * zz - xx - yy)
        Y[..., 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        Y[..., 13] = C3[4] * x * (4 * zz - xx - yy)
        Y[..., 14] = C3[5] * z * (xx - yy)
        Y[..., 15] = C3[6] * x * (xx - 3 * yy)
        if with_grad:
            dY[..., 9, 0] = C3[0] * 6 * x * y
            dY[..., 9, 1] = C3[0] * (3 * xx - 3 * yy)
            dY[..., 10, 0] = C3[1] * y * z
            dY[..., 10, 1] = C3[1] * x * z
            dY[..., 10, 2] = C3[1] * x * y
            dY[..., 11, 0] = C3[2] * (-2 * x * y)
            dY[..., 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
            dY[..., 11, 2] = C3[2] * 8 * y * z
            dY[..., 12, 0] = C3[3] * (-6 * x * z)
            dY[..., 12, 1] = C3[3] * (-6 * y * z)
            dY[..., 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
            dY[..., 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
            dY[..., 13, 1] = C3[4] * (-2 * x * y)
            dY[..., 13, 2] = C3[4] * 8 * x * z
            dY[..., 14, 0] = C3[5] * 2 * x * z
            dY[..., 14, 1] = C3[5] * (-2 * y * z)
            dY[..., 14, 2] = C3[5] * (xx - yy)
            dY[..., 15, 0] = C3[6] * (3 * xx - 3 * yy)
            dY[..., 15, 1] = C3[6] * (-6 * x * y)
    if with_grad:
        return Y, dY
    return Y


def _check(coeffs, degree):
    if degree not in (0, 1, 2, 3):
        raise InvalidParameterError(f"SH degree must be 0..3, got {degree}")
    if coeffs.shape[-2] != num_coeffs(degree):
        raise InvalidParameterError(
            f"expected {num_coeffs(degree)} SH coefficients for degree {degree}, "
            f"got {coeffs.shape[-2]}")


def eval_sh(coeffs, degree: int, view_dir):
    """Color for SH ``coeffs`` (..., D, C) seen along unit ``view_dir`` (..., 3).

    The basis dot product is offset by 0.5 and clamped below at 0.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    _check(coeffs, degree)
    Y = sh_basis(view_dir, degree)
    raw = np.einsum("...d,...dc->...c", Y, coeffs) + 0.5
    return np.maximum(raw, 0.0)


def eval_sh_with_grad(coeffs, degree: int, dirs):
    """Batched evaluation for (N, D, C) coefficients and raw (unnormalized)
    directions (N, 3). Returns the color and a closure mapping dL/dcolor to
    (dL/dcoeffs, dL/ddirs)."""
    _check(coeffs, degree)
    norm = np.linalg.norm(dirs, axis=-1, keepdims=True)
    norm = np.where(norm > 0.0, norm, 1.0)
    unit = dirs / norm
    Y, dY = sh_basis(unit, degree, with_grad=True)
    raw = np.einsum("nd,ndc->nc", Y, coeffs) + 0.5
    live = raw > 0.0
    color = np.where(live, raw, 0.0)

    def backward(g_color):
        g = np.where(live, g_color, 0.0)
        g_coeffs = Y[:, :, None] * g[:, None, :]
        if degree == 0:
            return g_coeffs, np.zeros_like(dirs)
        g_Y = np.einsum("nc,ndc->nd", g, coeffs)
        g_unit = np.einsum("nd,ndk->nk", g_Y, dY)
        g_dirs = (g_unit - unit * np.sum(unit * g_unit, axis=-1, keepdims=True)) / norm
        return g_coeffs, g_dirs

    return color, backward


def rgb_to_sh0(color):
    return (np.asarray(color, dtype=np.float64) - 0.5) / C0


def sh0_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * C0 + 0.5
