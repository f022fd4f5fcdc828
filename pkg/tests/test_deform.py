import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from fdcheck import check, sample_coords
from smokesplat.core import GaussianPrimitive
from smokesplat.core.types import softplus_inv
from smokesplat.deform import (DeformationField, DeformEval, deform_backward, deform_forward,
                               positional_encoding, temporal_multiplier, temporal_opacity)
from smokesplat.errors import InvalidParameterError


# -- encoding ---------------------------------------------------------------------------

def test_encoding_at_zero():
    f = positional_encoding(np.zeros(2), 4)
    np.testing.assert_array_equal(f.reshape(2, 4, 2)[..., 0], 0.0)
    np.testing.assert_array_equal(f.reshape(2, 4, 2)[..., 1], 1.0)


def test_encoding_degenerate_L0():
    assert positional_encoding(np.array([0.3, 0.4]), 0).size == 0
    np.testing.assert_array_equal(positional_encoding(np.array([0.3, 0.4]), 0, True), [0.3, 0.4])


def test_encoding_half():
    np.testing.assert_allclose(positional_encoding(0.5, 1), [1.0, 0.0], atol=1e-15)


def test_encoding_negative_L():
    with pytest.raises(InvalidParameterError):
        positional_encoding(0.1, -1)


# -- MLP forward ---------------------------------------------------------------------------

def mlp_oracle(field, p, t):
    feats = [*p]
    for x in p:
        for k in range(field.L_pos):
            feats += [np.sin(2 ** k * np.pi * x), np.cos(2 ** k * np.pi * x)]
    feats.append(t)
    for k in range(field.L_time):
        feats += [np.sin(2 ** k * np.pi * t), np.cos(2 ** k * np.pi * t)]
    h = np.array(feats)
    W = field.weights
    for k in range(0, len(W) - 2, 2):
        h = np.array([max(0.0, sum(h[i] * W[k][i, j] for i in range(len(h))) + W[k + 1][j])
                      for j in range(W[k].shape[1])])
    return h @ W[-2] + W[-1]


def test_forward_matches_oracle(rng):
    field = random_field(rng, depth=2, width=8, L_pos=3, L_time=2, head_std=0.3)
    p = rng.uniform(-1, 1, 3)
    dpos, dls, dq = deform_forward(field, p[None], 0.37)
    got = np.concatenate([dpos[0], dls[0], dq[0]])
    np.testing.assert_allclose(got, mlp_oracle(field, p, 0.37), atol=1e-6)


def test_zero_field_identity(rng):
    field = DeformationField.zeros(depth=3, width=16)
    for out in deform_forward(field, rng.normal(size=(5, 3)), 0.4):
        np.testing.assert_array_equal(out, 0.0)
    init = DeformationField.init(rng)
    for out in deform_forward(init, rng.normal(size=(5, 3)), 0.4):
        np.testing.assert_array_equal(out, 0.0)


def test_time_dependence(rng):
    field = random_field(rng, head_std=0.3)
    p = rng.normal(size=(4, 3))
    assert not np.allclose(deform_forward(field, p, 0.1)[0], deform_forward(field, p, 0.8)[0])


def test_non_finite_weights(rng):
    field = random_field(rng)
    field.weights[0][0, 0] = np.nan
    with pytest.raises(InvalidParameterError):
        deform_forward(field, np.zeros((1, 3)), 0.5)


def test_default_sizes(rng):
    field = DeformationField.init(rng)
    assert (field.depth, field.width, field.L_pos, field.L_time) == (4, 64, 10, 6)
    assert field.weights[-1].shape == (10,)


def test_bad_weight_layout():
    with pytest.raises(InvalidParameterError):
        DeformationField(weights=[np.zeros((3, 10))], L_pos=0, L_time=0)


# -- MLP backward ---------------------------------------------------------------------------

def test_zero_upstream(rng):
    field = random_field(rng)
    p = rng.normal(size=(6, 3))
    wg, pg = deform_backward(field, p, 0.5, np.zeros((6, 3)), np.zeros((6, 3)), np.zeros((6, 4)))
    assert all(not np.any(w) for w in wg) and not np.any(pg)


def test_upstream_shape_mismatch(rng):
    field = random_field(rng)
    with pytest.raises(InvalidParameterError):
        deform_backward(field, np.zeros((2, 3)), 0.5, np.zeros((2, 3)), np.zeros((2, 3)),
                        np.zeros((3, 4)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_fd(seed):
    rng = np.random.default_rng(seed)
    field = random_field(rng, depth=2, width=12, L_pos=3, L_time=2, head_std=0.3)
    p = rng.uniform(-1, 1, (5, 3))
    t = float(rng.uniform())
    up = [rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 4))]

    def f():
        return float(sum(np.sum(o * u) for o, u in zip(deform_forward(field, p, t), up)))
    wg, pg = deform_backward(field, p, t, *up)
    coords = [sample_coords(rng, w.shape, 40) for w in field.weights] + [None]
    coords[-1] = list(np.ndindex(p.shape))
    rep = check(f, field.weights + [p], wg + [pg], coords=coords)
    assert rep.ok() and rep.checked > 100, (str(rep), rep.failures[:3])


def test_eval_cache_matches_functional(rng):
    field = random_field(rng)
    p = rng.normal(size=(4, 3))
    ev = DeformEval(field, p, 0.3)
    for a, b in zip(ev.offsets, deform_forward(field, p, 0.3)):
        np.testing.assert_array_equal(a, b)


# -- temporal opacity --------------------------------------------------------------------------

def prim(ta, wa, td, wd):
    return GaussianPrimitive(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                             log_scale=np.zeros(3), opacity_logit_rgb=0.0,
                             opacity_logit_thermal=0.0, sh_rgb=np.zeros((1, 3)),
                             sh_thermal=np.zeros((1, 1)),
                             temporal=dict(t_appear=ta, width_appear=wa, t_disappear=td,
                                           width_disappear=wd))


def test_temporal_plateau():
    for t in (0.3, 0.5, 0.7):
        assert temporal_opacity(prim(0.3, 0.1, 0.7, 0.1), t) == 1.0


def test_temporal_one_width():
    assert temporal_opacity(prim(0.5, 0.1, 0.8, 0.2), 0.4) == pytest.approx(np.exp(-0.5))
    assert temporal_opacity(prim(0.5, 0.1, 0.8, 0.2), 1.0) == pytest.approx(np.exp(-0.5))


def test_temporal_wide_limit():
    for t in np.linspace(0, 1, 11):
        assert temporal_opacity(prim(0.5, 1e6, 0.5, 1e6), t) == pytest.approx(1.0, abs=1e-9)


def test_temporal_requires_params():
    g = prim(0, 1, 1, 1)
    g.temporal = None
    with pytest.raises(InvalidParameterError):
        temporal_opacity(g, 0.5)


def test_raw_parameterisation_matches_primitive():
    raw = np.array([[0.4, softplus_inv(0.1 - 1e-3), softplus_inv(0.2), softplus_inv(0.05 - 1e-3)]])
    for t in np.linspace(0, 1, 21):
        m = temporal_multiplier(raw, t)[0]
        assert m == pytest.approx(temporal_opacity(prim(0.4, 0.1, 0.6, 0.05), t), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 2), st.floats(-5, 3), st.floats(-5, 3), st.floats(-5, 3), st.floats(0, 1))
def test_temporal_bounded_and_continuous(ta, wa, span, wd, t):
    raw = np.array([[ta, wa, span, wd]])
    m = temporal_multiplier(raw, t)[0]
    assert 0.0 <= m <= 1.0
    eps = 1e-9
    assert abs(temporal_multiplier(raw, t + eps)[0] - m) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 1))
def test_temporal_gradient_fd(seed, t):
    rng = np.random.default_rng(seed)
    raw = np.column_stack([rng.uniform(0, 1, 6), rng.normal(-2, 1, 6), rng.normal(-1, 1, 6),
                           rng.normal(-2, 1, 6)])
    w = rng.normal(size=6)
    _, g = temporal_multiplier(raw, t, with_grad=True)
    rep = check(lambda: float(np.sum(w * temporal_multiplier(raw, t))), [raw], [g * w[:, None]])
    assert not rep.failures, rep.failures[:3]
