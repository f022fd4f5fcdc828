"""Temporal smoke model: an MLP deformation field over (position, time) and the
plateau-with-ramps temporal opacity profile."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.types import MIN_WIDTH, GaussianPrimitive, sigmoid, softplus
from .errors import InvalidParameterError

OUTPUT_DIM = 10  # dpos(3) + dlog_scale(3) + dquat(4)


def positional_encoding(x, L: int, include_input: bool = False):
    """Frequency features ``sin(2^k pi x), cos(2^k pi x)`` for k < L.

    ``x`` may be a scalar, a vector (one sample) or an (N, d) batch. Features
    are laid out per input dimension, interleaving sin/cos per frequency. With
    ``include_input`` the raw input is prepended.
    """
    if L < 0:
        raise InvalidParameterError("L must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim < 2
    xb = np.atleast_2d(x.reshape(1, -1) if x.ndim < 2 else x)
    n, d = xb.shape
    freqs = np.pi * 2.0 ** np.arange(L)
    arg = xb[:, :, None] * freqs  # (n, d, L)
    feats = np.stack([np.sin(arg), np.cos(arg)], axis=-1).reshape(n, d * 2 * L)
    if include_input:
        feats = np.concatenate([xb, feats], axis=1)
    return feats[0] if squeeze else feats


def _encoding_backward(x, L, g_feats, include_input):
    """dL/dx for ``positional_encoding(x, L, include_input)`` on an (N, d) batch."""
    n, d = x.shape
    g = np.zeros_like(x)
    if include_input:
        g += g_feats[:, :d]
        g_feats = g_feats[:, d:]
    if L == 0:
        return g
    freqs = np.pi * 2.0 ** np.arange(L)
    arg = x[:, :, None] * freqs
    gf = g_feats.reshape(n, d, L, 2)
    g += np.sum((gf[..., 0] * np.cos(arg) - gf[..., 1] * np.sin(arg)) * freqs, axis=-1)
    return g


@dataclass
class DeformationField:
    """ReLU MLP ``[x, PE(x), t, PE(t)] -> (dpos, dlog_scale, dquat)``.

    ``weights`` alternates matrices and biases: [W0, b0, ..., W_head, b_head].
    """

    weights: list
    L_pos: int = 10
    L_time: int = 6

    @staticmethod
    def input_dim(L_pos: int = 10, L_time: int = 6) -> int:
        return 3 * (1 + 2 * L_pos) + (1 + 2 * L_time)

    @classmethod
    def init(cls, rng: np.random.Generator, depth: int = 4, width: int = 64,
             L_pos: int = 10, L_time: int = 6) -> DeformationField:
        """He-initialized hidden layers and a zero head, so the field starts as
        the exact identity deformation."""
        dims = [cls.input_dim(L_pos, L_time)] + [width] * depth
        weights = []
        for din, dout in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / din)
            weights += [rng.uniform(-bound, bound, size=(din, dout)), np.zeros(dout)]
        weights += [np.zeros((dims[-1], OUTPUT_DIM)), np.zeros(OUTPUT_DIM)]
        return cls(weights=weights, L_pos=L_pos, L_time=L_time)

    @classmethod
    def zeros(cls, depth: int = 4, width: int = 64, L_pos: int = 10, L_time: int = 6):
        f = cls.init(np.random.default_rng(0), depth, width, L_pos, L_time)
        f.weights = [np.zeros_like(w) for w in f.weights]
        return f

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if len(self.weights) < 2 or len(self.weights) % 2:
            raise InvalidParameterError("weights must alternate matrix/bias")
        if self.weights[0].shape[0] != self.input_dim(self.L_pos, self.L_time):
            raise InvalidParameterError("first layer does not match the encoding size")
        if self.weights[-1].shape != (OUTPUT_DIM,):
            raise InvalidParameterError("output head must have 10 outputs")

    @property
    def depth(self) -> int:
        return len(self.weights) // 2 - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> DeformationField:
        return DeformationField([w.copy() for w in self.weights], self.L_pos, self.L_time)

    def encode(self, positions, t):
        positions = np.asarray(positions, dtype=np.float64)
        n = len(positions)
        tt = np.full((n, 1), float(t))
        return np.concatenate([positional_encoding(positions, self.L_pos, True),
                               positional_encoding(tt, self.L_time, True)], axis=1)


def _forward(field: DeformationField, positions, t):
    if not all(np.all(np.isfinite(w)) for w in field.weights):
        raise InvalidParameterError("deformation field has non-finite weights")
    h = field.encode(positions, t)
    acts = [h]
    W = field.weights
    for k in range(0, len(W) - 2, 2):
        h = np.maximum(h @ W[k] + W[k + 1], 0.0)
        acts.append(h)
    out = h @ W[-2] + W[-1]
    return out, acts


class DeformEval:
    """One forward evaluation of a field at fixed (positions, t), kept so the
    backward pass reuses the activations."""

    def __init__(self, field: DeformationField, positions, t: float):
        self.field = field
        self.positions = np.asarray(positions, dtype=np.float64)
        self.t = float(t)
        self.out, self.acts = _forward(field, self.positions, self.t)

    @property
    def offsets(self):
        o = self.out
        return o[:, 0:3], o[:, 3:6], o[:, 6:10]

    def backward(self, g_dpos, g_dlog_scale, g_dquat):
        n = len(self.positions)
        for g, k in ((g_dpos, 3), (g_dlog_scale, 3), (g_dquat, 4)):
            if np.shape(g) != (n, k):
                raise InvalidParameterError(f"upstream gradient shape {np.shape(g)} != {(n, k)}")
        W, acts = self.field.weights, self.acts
        g_out = np.concatenate([g_dpos, g_dlog_scale, g_dquat], axis=1)
        grads = [None] * len(W)
        grads[-2] = acts[-1].T @ g_out
        grads[-1] = g_out.sum(axis=0)
        g_h = g_out @ W[-2].T
        for k in range(len(W) - 4, -1, -2):
            g_h = g_h * (acts[k // 2 + 1] > 0)
            grads[k] = acts[k // 2].T @ g_h
            grads[k + 1] = g_h.sum(axis=0)
            g_h = g_h @ W[k].T
        pos_width = 3 * (1 + 2 * self.field.L_pos)
        g_pos = _encoding_backward(self.positions, self.field.L_pos, g_h[:, :pos_width], True)
        return grads, g_pos


def deform_forward(field: DeformationField, positions, t: float):
    """Per-primitive offsets ``(dpos (N,3), dlog_scale (N,3), dquat (N,4))``."""
    out, _ = _forward(field, positions, t)
    return out[:, 0:3], out[:, 3:6], out[:, 6:10]


def deform_backward(field: DeformationField, positions, t: float, g_dpos, g_dlog_scale, g_dquat):
    """Exact reverse mode through the MLP and encodings.

    Returns ``(weight_grads, position_grads)``; weight grads follow the layout
    of ``field.weights``.
    """
    return DeformEval(field, positions, t).backward(g_dpos, g_dlog_scale, g_dquat)


# ---------------------------------------------------------------------------
# temporal opacity


def temporal_multiplier(temporal_raw, t: float, with_grad: bool = False):
    """Opacity multiplier m(t) for raw temporal rows (N, 4).

    Equals 1 on [t_appear, t_disappear] and decays as a Gaussian ramp outside,
    with separate widths on either side.
    """
    raw = np.asarray(temporal_raw, dtype=np.float64)
    ta = raw[:, 0]
    wa = MIN_WIDTH + softplus(raw[:, 1])
    td = ta + softplus(raw[:, 2])
    wd = MIN_WIDTH + softplus(raw[:, 3])
    before = t < ta
    after = t > td
    da = (t - ta) / wa
    dd = (t - td) / wd
    m = np.ones(len(raw))
    m = np.where(before, np.exp(-0.5 * da * da), m)
    m = np.where(after, np.exp(-0.5 * dd * dd), m)
    if not with_grad:
        return m
    g = np.zeros_like(raw)
    # before: dm/dta = m * da / wa ; dm/dwa = m * da^2 / wa
    g[:, 0] = np.where(before, m * da / wa, 0.0)
    g[:, 1] = np.where(before, m * da * da / wa * sigmoid(raw[:, 1]), 0.0)
    # after: td = ta + softplus(span)
    dm_dtd = np.where(after, m * dd / wd, 0.0)
    g[:, 0] += dm_dtd
    g[:, 2] = dm_dtd * sigmoid(raw[:, 2])
    g[:, 3] = np.where(after, m * dd * dd / wd * sigmoid(raw[:, 3]), 0.0)
    return m, g


def temporal_opacity(g: GaussianPrimitive, t: float) -> float:
    """Opacity multiplier in (0, 1] of a smoke primitive at time ``t``."""
    if g.temporal is None:
        raise InvalidParameterError("primitive has no temporal parameters")
    tp = g.temporal
    if t < tp["t_appear"]:
        return float(np.exp(-0.5 * ((t - tp["t_appear"]) / tp["width_appear"]) ** 2))
    if t > tp["t_disappear"]:
        return float(np.exp(-0.5 * ((t - tp["t_disappear"]) / tp["width_disappear"]) ** 2))
    return 1.0
