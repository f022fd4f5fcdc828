"""Quaternion / covariance helpers with hand-written reverse-mode partners.

Quaternions are stored as (w, x, y, z).
"""

import numpy as np

from ..errors import InvalidParameterError


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise InvalidParameterError("zero quaternion")
    return q / n


def quat_normalize_backward(q, grad_unit):
    """Gradient w.r.t. the raw quaternion given the gradient w.r.t. q/|q|."""
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / n
    return (grad_unit - u * np.sum(u * grad_unit, axis=-1, keepdims=True)) / n


def quat_to_rotmat(q):
    """Rotation matrices for *unit* quaternions, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, G):
    """Gradient w.r.t. unit quaternion ``q`` given dL/dR = ``G``."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = np.empty_like(q)
    g[..., 0] = 2 * (-z * G[..., 0, 1] + y * G[..., 0, 2] + z * G[..., 1, 0]
                     - x * G[..., 1, 2] - y * G[..., 2, 0] + x * G[..., 2, 1])
    g[..., 1] = 2 * (y * G[..., 0, 1] + z * G[..., 0, 2] + y * G[..., 1, 0]
                     - 2 * x * G[..., 1, 1] - w * G[..., 1, 2] + z * G[..., 2, 0]
                     + w * G[..., 2, 1] - 2 * x * G[..., 2, 2])
    g[..., 2] = 2 * (-2 * y * G[..., 0, 0] + x * G[..., 0, 1] + w * G[..., 0, 2]
                     + x * G[..., 1, 0] + z * G[..., 1, 2] - w * G[..., 2, 0]
                     + z * G[..., 2, 1] - 2 * y * G[..., 2, 2])
    g[..., 3] = 2 * (-2 * z * G[..., 0, 0] - w * G[..., 0, 1] + x * G[..., 0, 2]
                     + w * G[..., 1, 0] - 2 * z * G[..., 1, 1] + y * G[..., 1, 2]
                     + x * G[..., 2, 0] + y * G[..., 2, 1])
    return g


def covariance_from_params(log_scale, rotation):
    """Return R diag(exp(2 log_scale)) R^T.

    Works on a single Gaussian (shapes (3,), (4,)) or batched ((N, 3), (N, 4)).
    The quaternion need not be normalized but must be non-zero.
    """
    log_scale = np.asarray(log_scale, dtype=np.float64)
    R = quat_to_rotmat(quat_normalize(rotation))
    s2 = np.exp(2.0 * log_scale)
    cov = (R * s2[..., None, :]) @ np.swapaxes(R, -1, -2)
    # exact symmetry
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def covariance_backward(log_scale, rotation, grad_cov):
    """Gradients (log_scale, raw quaternion) given a symmetric dL/dSigma."""
    q = np.asarray(rotation, dtype=np.float64)
    u = quat_normalize(q)
    R = quat_to_rotmat(u)
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    Gs = 0.5 * (grad_cov + np.swapaxes(grad_cov, -1, -2))
    # Sigma = R D R^T  =>  dL/dR = 2 G R D,  dL/dD_kk = (R^T G R)_kk
    GR = Gs @ R
    g_R = 2.0 * GR * s2[..., None, :]
    g_d = np.einsum("...ik,...ik->...k", R, GR)
    g_log_scale = 2.0 * s2 * g_d
    g_u = quat_to_rotmat_backward(u, g_R)
    return g_log_scale, quat_normalize_backward(q, g_u)


def rotmat_to_quat(R):
    """Unit quaternion (w, x, y, z) for a single proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    Camera convention: +x right, +y down, +z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ eye
