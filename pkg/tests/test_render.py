import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import make_camera, random_field, random_set
from fdcheck import check, sample_coords
from smokesplat.core import GaussianPrimitive, GaussianSet, eval_sh
from smokesplat.deform import DeformationField
from smokesplat.errors import InvalidParameterError
from smokesplat.render import RenderMode, RenderPass, project_gaussian, render, render_backward
from smokesplat.render import raster
from smokesplat.render.project import DILATION

COMBINED, SURFACE, SMOKE = RenderMode.COMBINED, RenderMode.SURFACE_ONLY, RenderMode.SMOKE_ONLY


def on_axis_camera(size=33, f=50.0, modality="rgb"):
    # identity pose: looking down +z, image centre (16, 16)
    from smokesplat.core.types import Camera
    return Camera(fx=f, fy=f, cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size,
                  rotation=np.eye(3), translation=np.zeros(3), modality=modality)


def primitive(pos, log_scale=(-2.0, -2.0, -2.0), logit=0.0, dc=(0.0, 0.0, 0.0), q=(1, 0, 0, 0),
              temporal=None):
    sh = np.zeros((1, 3))
    sh[0] = dc
    return GaussianPrimitive(position=np.asarray(pos, float), rotation=np.asarray(q, float),
                             log_scale=np.asarray(log_scale, float), opacity_logit_rgb=logit,
                             opacity_logit_thermal=logit, sh_rgb=sh, sh_thermal=np.zeros((1, 1)),
                             temporal=temporal)


# -- projection -------------------------------------------------------------------

@pytest.mark.parametrize("s,z,f", [(0.1, 2.0, 50.0), (0.05, 4.0, 80.0), (0.3, 1.5, 30.0)])
def test_projection_isotropic_on_axis(s, z, f):
    cam = on_axis_camera(f=f)
    sp = project_gaussian(primitive([0, 0, z], log_scale=[np.log(s)] * 3), cam)
    np.testing.assert_allclose(sp.mean2d, [cam.cx, cam.cy], atol=1e-12)
    np.testing.assert_allclose(sp.cov2d, ((f * s / z) ** 2 + 0.3) * np.eye(2), rtol=1e-12)
    assert sp.depth == pytest.approx(z)


def test_projection_off_axis_matches_jacobian():
    cam = on_axis_camera(f=40.0)
    x, y, z, s = 0.3, -0.2, 2.0, 0.1
    sp = project_gaussian(primitive([x, y, z], log_scale=[np.log(s)] * 3), cam)
    J = np.array([[40 / z, 0, -40 * x / z ** 2], [0, 40 / z, -40 * y / z ** 2]])
    np.testing.assert_allclose(sp.cov2d, s * s * J @ J.T + DILATION * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(sp.mean2d, [40 * x / z + cam.cx, 40 * y / z + cam.cy])


@pytest.mark.parametrize("z", [-1.0, 0.0, 0.005])
def test_projection_culls_behind_near_plane(z):
    assert project_gaussian(primitive([0, 0, z]), on_axis_camera()) is None


def test_projection_zero_deformation_is_identity(rng):
    cam = make_camera()
    temporal = dict(t_appear=0.2, width_appear=0.1, t_disappear=0.9, width_disappear=0.1)
    g = primitive([0.1, 0.2, 0.3], temporal=temporal, q=(0.9, 0.1, 0.2, 0.3))
    a = project_gaussian(g, cam, 0.5)
    b = project_gaussian(g, cam, 0.5, DeformationField.zeros(depth=2, width=8))
    np.testing.assert_array_equal(a.mean2d, b.mean2d)
    np.testing.assert_array_equal(a.cov2d, b.cov2d)
    assert a.depth == b.depth


def test_projection_splat_eigenvalues_above_floor(rng):
    s = random_set(rng, "surface", 50, log_scale=(-8, -1))
    cam = make_camera()
    for g in s:
        sp = project_gaussian(g, cam)
        if sp is not None:
            assert np.linalg.eigvalsh(sp.cov2d).min() >= DILATION * (1 - 1e-12)


def test_deform_on_surface_rejected(rng):
    from smokesplat.render.project import ProjectedSet
    with pytest.raises(InvalidParameterError):
        ProjectedSet(random_set(rng, "surface", 3), make_camera(), 0.5,
                     DeformationField.zeros(depth=2, width=8))


# -- forward examples -------------------------------------------------------------

def test_single_opaque_gaussian_center_pixel():
    cam = on_axis_camera()
    dc = np.array([0.4, -0.2, 0.9])
    g = primitive([0, 0, 2.0], log_scale=[np.log(0.2)] * 3, logit=20.0, dc=dc)
    s = GaussianSet.from_primitives("surface", [g])
    out = render(s, cam, 0.0, SURFACE)
    c = int(cam.cy), int(cam.cx)
    expect = eval_sh(g.sh_rgb, 0, np.array([0, 0, 1.0]))
    np.testing.assert_allclose(out.color[c], 0.99 * expect, rtol=1e-9)
    assert out.accumulation[c] == pytest.approx(0.99)
    assert out.depth[c] == pytest.approx(2.0, rel=1e-7)


def test_empty_smoke_combined_equals_surface_only(rng):
    surf = random_set(rng, "surface", 25)
    for modality in ("rgb", "thermal"):
        cam = make_camera(modality)
        a = render([surf, GaussianSet.empty("smoke", 1, 0)], cam, 0.3, COMBINED)
        b = render([surf], cam, 0.3, SURFACE)
        for name in ("color", "accumulation", "depth", "final_transmittance"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_smoke_excluded_from_surface_mode(rng):
    surf, smoke = random_set(rng, "surface", 10), random_set(rng, "smoke", 10)
    cam = make_camera()
    a = render([surf, smoke], cam, 0.4, SURFACE)
    b = render([surf], cam, 0.4, SURFACE)
    np.testing.assert_array_equal(a.color, b.color)


def _white(gset):
    # DC large enough that eval_sh saturates at 1 after the +0.5 offset
    gset = gset.copy()
    gset.sh_rgb[:] = 0.0
    gset.sh_rgb[:, 0, :] = 0.5 / 0.28209479177387814
    gset.sh_thermal[:] = 0.0
    gset.sh_thermal[:, 0, :] = 0.5 / 0.28209479177387814
    return gset


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_white_colors_telescope(seed):
    rng = np.random.default_rng(seed)
    sets = [_white(random_set(rng, "surface", 15, opacity=(-1, 5))),
            _white(random_set(rng, "smoke", 10, opacity=(-1, 5)))]
    cam = make_camera("rgb")
    out = render(sets, cam, float(rng.uniform()), COMBINED)
    np.testing.assert_allclose(out.color + out.final_transmittance[..., None], 1.0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["rgb", "thermal"]),
       st.sampled_from(list(RenderMode)))
def test_energy_conservation(seed, modality, mode):
    rng = np.random.default_rng(seed)
    sets = [random_set(rng, "surface", 20, opacity=(-2, 6)),
            random_set(rng, "smoke", 10, opacity=(-2, 6))]
    out = render(sets, make_camera(modality), float(rng.uniform()), mode)
    np.testing.assert_allclose(out.accumulation + out.final_transmittance, 1.0, atol=1e-12)
    assert np.all(out.final_transmittance >= 0) and np.all(out.accumulation <= 1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_factorization_disjoint_depths(seed):
    rng = np.random.default_rng(seed)
    surf = random_set(rng, "surface", 15, opacity=(-1, 4))
    smoke = random_set(rng, "smoke", 15, opacity=(-1, 4))
    surf.positions[:, 1] += 1.5   # farther from a camera on the -y axis
    smoke.positions[:, 1] -= 1.0
    cam = make_camera(eye=(0.0, -4.0, 0.0))
    t = float(rng.uniform())
    both = render([surf, smoke], cam, t, COMBINED).final_transmittance
    prod = (render([surf, smoke], cam, t, SURFACE).final_transmittance
            * render([surf, smoke], cam, t, SMOKE).final_transmittance)
    np.testing.assert_allclose(both, prod, atol=1e-5)


def test_factorization_interleaved(rng):
    sets = [random_set(rng, "surface", 20), random_set(rng, "smoke", 20)]
    cam = make_camera()
    out = [render(sets, cam, 0.5, m).final_transmittance for m in (COMBINED, SURFACE, SMOKE)]
    np.testing.assert_allclose(out[0], out[1] * out[2], atol=1e-5)


def test_time_out_of_range(rng):
    sets = [random_set(rng, "surface", 3), random_set(rng, "smoke", 3)]
    with pytest.raises(InvalidParameterError):
        render(sets, make_camera(), 1.5, COMBINED)
    render(sets, make_camera(), 1.5, SURFACE)


def test_missing_sh_for_modality(rng):
    s = random_set(rng, "surface", 3)
    s.sh_thermal = np.zeros((3, 0, 1))
    with pytest.raises(InvalidParameterError):
        render(s, make_camera("thermal"), 0.0, SURFACE)
    render(s, make_camera("rgb"), 0.0, SURFACE)


def test_backward_buffer_shape_mismatch(rng):
    s = random_set(rng, "surface", 3)
    with pytest.raises(InvalidParameterError):
        render_backward(s, make_camera(), 0.0, SURFACE, grad_color=np.zeros((5, 5, 3)))


def test_deterministic(rng):
    sets = [random_set(rng, "surface", 30), random_set(rng, "smoke", 30)]
    field = random_field(rng)
    cam = make_camera()
    g = np.random.default_rng(0).normal(size=(32, 32, 3))
    a = RenderPass(sets, cam, 0.5, COMBINED, field)
    b = RenderPass(sets, cam, 0.5, COMBINED, field)
    np.testing.assert_array_equal(a.output.color, b.output.color)
    ga, gb = a.backward(g), b.backward(g)
    for x, y in zip(ga.sets, gb.sets):
        for k in x:
            np.testing.assert_array_equal(x[k], y[k])
    for x, y in zip(ga.deform, gb.deform):
        np.testing.assert_array_equal(x, y)


def test_output_mutation_does_not_change_gradients(rng):
    s = random_set(rng, "surface", 10)
    cam = make_camera()
    g = np.ones((32, 32, 3))
    rp = RenderPass(s, cam, 0.0, SURFACE)
    ref = rp.backward(g).sets[0]["opacity_logits"].copy()
    rp.output.accumulation[:] = 7.0
    rp.output.final_transmittance[:] = 7.0
    np.testing.assert_array_equal(rp.backward(g).sets[0]["opacity_logits"], ref)


# -- independent oracle ------------------------------------------------------------

def oracle_render(sets, cam, t, mode):
    """Plain per-pixel compositing written without the package's projection
    code: scipy rotations and an explicit EWA Jacobian."""
    from smokesplat.deform import temporal_multiplier

    splats = []
    for s in sets:
        if not mode.includes(s.kind):
            continue
        op = s.opacity(cam.modality)
        if s.is_smoke:
            op = op * temporal_multiplier(s.temporal, t)
        sh = s.sh(cam.modality)
        degree = int(np.sqrt(sh.shape[1])) - 1
        for i in range(len(s)):
            q = s.rotations[i] / np.linalg.norm(s.rotations[i])
            R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
            sigma = R @ np.diag(np.exp(2 * s.log_scales[i])) @ R.T
            pc = cam.rotation @ s.positions[i] + cam.translation
            if pc[2] <= 0.01 * s.scene_extent:
                continue
            x, y, z = pc
            J = np.array([[cam.fx / z, 0, -cam.fx * x / z ** 2],
                          [0, cam.fy / z, -cam.fy * y / z ** 2]])
            cov = J @ cam.rotation @ sigma @ cam.rotation.T @ J.T + DILATION * np.eye(2)
            d = s.positions[i] - cam.center
            color = eval_sh(sh[i], degree, d / np.linalg.norm(d))
            splats.append((z, [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
                           np.linalg.inv(cov), op[i], color))
    splats.sort(key=lambda sp: sp[0])  # list.sort is stable
    H, W, C = cam.shape
    color, acc, Tf = np.zeros((H, W, C)), np.zeros((H, W)), np.ones((H, W))
    for py in range(H):
        for px in range(W):
            T = 1.0
            for z, m, inv, o, c in splats:
                dd = np.array([px - m[0], py - m[1]])
                a = min(0.99, o * np.exp(-0.5 * dd @ inv @ dd))
                if a < 1 / 255:
                    continue
                if T * (1 - a) < raster.T_MIN:
                    break
                color[py, px] += c * a * T
                acc[py, px] += a * T
                T *= 1 - a
            Tf[py, px] = T
    return color, acc, Tf


@pytest.mark.parametrize("modality", ["rgb", "thermal"])
def test_matches_independent_oracle(rng, modality):
    sets = [random_set(rng, "surface", 12), random_set(rng, "smoke", 8)]
    cam = make_camera(modality, size=24, f=30)
    for mode in RenderMode:
        out = render(sets, cam, 0.4, mode)
        color, acc, Tf = oracle_render(sets, cam, 0.4, mode)
        np.testing.assert_allclose(out.color, color, atol=1e-10)
        np.testing.assert_allclose(out.accumulation, acc, atol=1e-10)
        np.testing.assert_allclose(out.final_transmittance, Tf, atol=1e-10)


def test_tiled_matches_bruteforce(rng):
    sets = [random_set(rng, "surface", 60, spread=1.0), random_set(rng, "smoke", 30)]
    cam = make_camera(size=48, f=50)
    rp = RenderPass(sets, cam, 0.6, COMBINED)
    ref = raster.composite_bruteforce(rp.means, rp.conics, rp.opac, rp.colors, rp.depths, 48, 48)
    out = rp.output
    np.testing.assert_array_equal(out.color, ref[0])
    np.testing.assert_array_equal(out.accumulation, ref[1])
    np.testing.assert_array_equal(out.depth, ref[2])
    np.testing.assert_array_equal(out.final_transmittance, ref[3])


# -- gradients ----------------------------------------------------------------------

def _objective(sets, cam, t, mode, field, rng):
    H, W, C = cam.shape
    gc, ga, gd = rng.normal(size=(H, W, C)), rng.normal(size=(H, W)), 0.1 * rng.normal(size=(H, W))

    def f():
        o = RenderPass(sets, cam, t, mode, field).output
        return float(np.sum(o.color * gc) + np.sum(o.accumulation * ga) + np.sum(o.depth * gd))
    return f, (gc, ga, gd)


def test_zero_upstream_zero_gradients(rng):
    sets = [random_set(rng, "surface", 10), random_set(rng, "smoke", 10)]
    field = random_field(rng)
    g = RenderPass(sets, make_camera(), 0.5, COMBINED, field).backward()
    for d in g.sets:
        for v in d.values():
            assert not np.any(v)
    for w in g.deform:
        assert not np.any(w)


def test_single_gaussian_opacity_fd():
    cam = on_axis_camera()
    g = primitive([0.05, -0.02, 2.0], log_scale=[np.log(0.15)] * 3, logit=0.3, dc=(0.4, 0.1, -0.3))
    s = GaussianSet.from_primitives("surface", [g])
    px = (15, 18)

    def pixel(logit):
        s.opacity_logits[0] = logit
        return render(s, cam, 0.0, SURFACE).color[px][0]
    h = 1e-4
    fd = (pixel(0.3 + h) - pixel(0.3 - h)) / (2 * h)
    s.opacity_logits[0] = 0.3
    gcol = np.zeros((33, 33, 3))
    gcol[px][0] = 1.0
    a = render_backward(s, cam, 0.0, SURFACE, grad_color=gcol).sets[0]["opacity_logits"][0]
    assert abs(a - fd) / abs(fd) < 1e-3


@pytest.mark.parametrize("modality", ["rgb", "thermal"])
def test_two_set_gradients_fd(modality):
    rng = np.random.default_rng(7 if modality == "rgb" else 8)
    sets = [random_set(rng, "surface", 12, sh_degree_rgb=3), random_set(rng, "smoke", 8, 0)]
    field = random_field(rng)
    cam = make_camera(modality)
    f, (gc, ga, gd) = _objective(sets, cam, 0.3, COMBINED, field, rng)
    g = RenderPass(sets, cam, 0.3, COMBINED, field).backward(gc, ga, gd)
    rep = None
    for s, gs in zip(sets, g.sets):
        names = list(s.params())
        r = check(f, [s.params()[k] for k in names], [gs[k] for k in names], names)
        rep = r if rep is None else rep.merge(r)
    coords = [sample_coords(rng, w.shape, 25) for w in field.weights]
    rep.merge(check(f, field.weights, g.deform, [f"w{i}" for i in range(len(field.weights))],
                    coords=coords))
    assert rep.checked > 200
    assert rep.ok(), (str(rep), rep.failures[:5])


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(list(RenderMode)))
def test_random_scene_gradients_fd(seed, mode):
    rng = np.random.default_rng(seed)
    ns = int(rng.integers(1, 16))
    sets = [random_set(rng, "surface", ns), random_set(rng, "smoke", 30 - ns - int(rng.integers(0, 5)), 0)]
    field = random_field(rng)
    cam = make_camera(str(rng.choice(["rgb", "thermal"])))
    t = float(rng.uniform())
    f, (gc, ga, gd) = _objective(sets, cam, t, mode, field, rng)
    g = RenderPass(sets, cam, t, mode, field).backward(gc, ga, gd)
    rep = None
    for s, gs in zip(sets, g.sets):
        names = list(s.params())
        coords = [sample_coords(rng, s.params()[k].shape, 12) for k in names]
        r = check(f, [s.params()[k] for k in names], [gs[k] for k in names], names, coords=coords)
        rep = r if rep is None else rep.merge(r)
    assert not rep.failures, (str(rep), rep.failures[:5])
    assert rep.excluded_fraction < 0.05, str(rep)


def test_deferred_deform_matches_direct(rng):
    sets = [random_set(rng, "surface", 8), random_set(rng, "smoke", 8)]
    field = random_field(rng)
    cam = make_camera()
    gc = rng.normal(size=(32, 32, 3))
    direct = RenderPass(sets, cam, 0.5, COMBINED, field).backward(gc)
    rp = RenderPass(sets, cam, 0.5, COMBINED, field)
    deferred = rp.backward(gc, defer_deform=True)
    ev = rp.projected[1].deformed
    wg, g_canon = ev.backward(*deferred.deform_upstream[1])
    for a, b in zip(direct.deform, wg):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(direct.sets[1]["positions"],
                               deferred.sets[1]["positions"] + g_canon, rtol=1e-12, atol=1e-15)
