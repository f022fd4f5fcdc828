import numpy as np
import pytest

from smokesplat.core.geometry import look_at
from smokesplat.core.types import Camera, GaussianSet, SetKind
from smokesplat.deform import DeformationField


def make_camera(modality="rgb", size=32, eye=(0.3, -3.0, 0.5), target=(0.0, 0.0, 0.0), f=40.0):
    R, t = look_at(eye, target)
    return Camera(fx=f, fy=f, cx=size / 2, cy=size / 2, width=size, height=size,
                  rotation=R, translation=t, modality=modality)


def random_set(rng, kind, n, sh_degree_rgb=1, spread=0.6, log_scale=(-2.3, -1.3),
               opacity=(-1.0, 2.0)):
    smoke = SetKind(kind) is SetKind.SMOKE
    temporal = None
    if smoke:
        temporal = np.column_stack([rng.uniform(0.2, 0.5, n), rng.normal(-2, 0.5, n),
                                    rng.normal(-1, 0.5, n), rng.normal(-2, 0.5, n)])
    return GaussianSet(
        kind=kind, positions=rng.uniform(-spread, spread, (n, 3)),
        rotations=rng.normal(size=(n, 4)), log_scales=rng.uniform(*log_scale, (n, 3)),
        opacity_logits=rng.uniform(*opacity, n),
        sh_rgb=rng.normal(0, 0.3, (n, (sh_degree_rgb + 1) ** 2, 3)),
        sh_thermal=rng.normal(0, 0.3, (n, 1, 1)),
        opacity_gaps=rng.normal(size=n) if smoke else None, temporal=temporal)


def random_field(rng, depth=2, width=16, L_pos=2, L_time=2, head_std=0.05):
    field = DeformationField.init(rng, depth=depth, width=width, L_pos=L_pos, L_time=L_time)
    field.weights[-2] = rng.normal(0, head_std, field.weights[-2].shape)
    field.weights[-1] = rng.normal(0, head_std, field.weights[-1].shape)
    return field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_scene():
    """A small in-memory synthetic dataset: (spec, frames, points, aabb)."""
    from smokesplat.synth import SCENE_AABB, SceneSpec, gen_scene, point_hints, render_frames

    spec = SceneSpec(n_frames=10, rgb_size=32, thermal_size=24, spacing=0.16)
    surface, smoke = gen_scene(spec)
    frames = [f for i in range(spec.n_frames) for f in render_frames(spec, surface, smoke, i)]
    return spec, frames, point_hints(spec, surface), SCENE_AABB.copy()


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion."""
    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
