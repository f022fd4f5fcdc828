import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smokesplat.errors import InvalidParameterError
from smokesplat.mie import (ParticleSpec, band_mean, mie_coefficients, scattering_coefficient,
                            scattering_efficiency, spectrum_sweep, sweep_csv)


def q_sca_mpmath(x, m, terms, dps=40):
    """Scattering efficiency from spherical Bessel functions in arbitrary precision."""
    with mp.workdps(dps):
        x, m = mp.mpf(x), mp.mpc(m)

        def psi(n, z):
            return z * mp.sqrt(mp.pi / (2 * z)) * mp.besselj(n + 0.5, z)

        def dpsi(n, z):
            return mp.diff(lambda t: psi(n, t), z)

        def xi(n, z):
            y = mp.sqrt(mp.pi / (2 * z)) * mp.bessely(n + 0.5, z)
            return psi(n, z) + 1j * z * y

        def dxi(n, z):
            return mp.diff(lambda t: xi(n, t), z)

        total = mp.mpf(0)
        mx = m * x
        for n in range(1, terms + 1):
            p_x, dp_x = psi(n, x), dpsi(n, x)
            p_mx, dp_mx = psi(n, mx), dpsi(n, mx)
            x_x, dx_x = xi(n, x), dxi(n, x)
            a = (m * p_mx * dp_x - p_x * dp_mx) / (m * p_mx * dx_x - x_x * dp_mx)
            b = (p_mx * dp_x - m * p_x * dp_mx) / (p_mx * dx_x - m * x_x * dp_mx)
            total += (2 * n + 1) * (abs(a) ** 2 + abs(b) ** 2)
        return float(2 / x ** 2 * total)


def rayleigh_q(x, m):
    return 8 / 3 * x ** 4 * abs((m * m - 1) / (m * m + 2)) ** 2


@pytest.mark.parametrize("x,m", [(1.0, 1.5), (3.0, 1.55 + 0.01j), (0.3, 1.33), (25.0, 1.125)])
def test_efficiency_matches_mpmath(x, m):
    a, _ = mie_coefficients(x, m)
    ref = q_sca_mpmath(x, m, len(a) + 5)
    assert scattering_efficiency(x, m) == pytest.approx(ref, rel=1e-6)


def test_rayleigh_a1():
    x, m = 0.01, 1.5
    a, _ = mie_coefficients(x, m)
    expect = -2j / 3 * x ** 3 * (m * m - 1) / (m * m + 2)
    assert abs(a[0] - expect) / abs(expect) < 0.01


@pytest.mark.parametrize("x", [0.001, 0.01, 0.03, 0.05])
def test_rayleigh_efficiency(x):
    assert scattering_efficiency(x, 1.5) == pytest.approx(rayleigh_q(x, 1.5), rel=0.01)


def test_no_contrast_no_scattering():
    a, b = mie_coefficients(2.0, 1.0)
    assert np.max(np.abs(a)) < 1e-12 and np.max(np.abs(b)) < 1e-12
    assert scattering_efficiency(2.0, 1.0) < 1e-20


def test_large_particle_extinction_regime():
    assert 1.9 <= scattering_efficiency(100.0, 1.33) <= 2.2


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_invalid_size_parameter(x):
    with pytest.raises(InvalidParameterError):
        mie_coefficients(x, 1.5)


def test_term_count():
    a, b = mie_coefficients(10.0, 1.5)
    assert len(a) == len(b) == int(np.ceil(10 + 4 * 10 ** (1 / 3) + 2))


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 200.0), st.floats(1.01, 2.0), st.floats(0.0, 0.1))
def test_efficiency_converged_and_nonnegative(x, re, im):
    m = complex(re, im)
    q = scattering_efficiency(x, m)
    assert q >= 0
    assert abs(scattering_efficiency(x, m, extra_terms=5) - q) < 1e-9 * max(1.0, q)


# -- coefficient and sweep -----------------------------------------------------------------------

def test_visible_vs_lwir_ratio():
    spec = ParticleSpec()
    assert scattering_coefficient(0.55, spec) / scattering_coefficient(10.0, spec) > 10


def test_band_means():
    spec = ParticleSpec()
    assert band_mean(0.38, 0.7, spec) > band_mean(8.0, 14.0, spec)


def test_number_density_linearity():
    s1 = ParticleSpec(number_density=3e9)
    s2 = ParticleSpec(number_density=6e9)
    assert scattering_coefficient(0.55, s2) == 2 * scattering_coefficient(0.55, s1)
    assert scattering_coefficient(0.55, ParticleSpec(number_density=0.0)) == 0.0


def test_geometry_scaling():
    spec = ParticleSpec(radius=0.4, number_density=1e10)
    x = 2 * np.pi * 0.4 / 0.9
    expect = 1e10 * np.pi * (0.4e-6) ** 2 * scattering_efficiency(x, spec.refractive_index)
    assert scattering_coefficient(0.9, spec) == pytest.approx(expect, rel=1e-14)


def test_sweep_structure_and_determinism():
    spec = ParticleSpec()
    rows = spectrum_sweep(0.38, 14.0, 100, spec)
    lams = [r[0] for r in rows]
    assert len(rows) == 100 and np.all(np.diff(lams) > 0)
    assert lams[0] == pytest.approx(0.38) and lams[-1] == pytest.approx(14.0)
    np.testing.assert_allclose(np.diff(np.log(lams)), np.log(14 / 0.38) / 99)
    text = sweep_csv(rows, spec)
    assert text == sweep_csv(spectrum_sweep(0.38, 14.0, 100, spec), spec)
    assert text.startswith("# radius_um=0.5 refractive_index=1.55+0.01j")
    assert len(text.strip().splitlines()) == 102


@pytest.mark.parametrize("args", [(1.0, 0.5, 10), (0.0, 1.0, 10), (0.5, 1.0, 1)])
def test_sweep_invalid_range(args):
    with pytest.raises(InvalidParameterError):
        spectrum_sweep(*args, ParticleSpec())


@pytest.mark.parametrize("kw", [{"radius": 0}, {"refractive_index": -1.5}, {"refractive_index": 1.5 - 0.1j},
                                {"number_density": -1}])
def test_particle_spec_validation(kw):
    with pytest.raises(InvalidParameterError):
        ParticleSpec(**kw)
