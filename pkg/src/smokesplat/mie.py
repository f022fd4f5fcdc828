"""Mie scattering by homogeneous spheres, for wavelength sweeps of smoke
aerosol scattering."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass
class ParticleSpec:
    radius: float = 0.5                 # micrometres
    refractive_index: complex = 1.55 + 0.01j
    number_density: float = 1.0e10      # particles per cubic metre

    def __post_init__(self):
        self.refractive_index = complex(self.refractive_index)
        if not self.radius > 0:
            raise InvalidParameterError("radius must be positive")
        if self.refractive_index.real <= 0 or self.refractive_index.imag < 0:
            raise InvalidParameterError("refractive index needs Re(m) > 0 and Im(m) >= 0")
        if self.number_density < 0:
            raise InvalidParameterError("number density must be non-negative")


def n_terms(x: float) -> int:
    return int(math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0))


def mie_coefficients(x: float, m: complex, nmax: int | None = None):
    """Series coefficients ``(a_n, b_n)`` for n = 1..N as complex arrays.

    N defaults to ceil(x + 4 x^(1/3) + 2). The logarithmic derivative D_n(mx)
    runs downward from 1.1 max(N, |mx|) + 15; psi_n and xi_n run upward.
    """
    if not x > 0:
        raise InvalidParameterError("size parameter must be positive")
    m = complex(m)
    N = n_terms(x) if nmax is None else int(nmax)
    mx = m * x
    # a flat +15 margin leaves D visibly unconverged near n ~ |mx| once x > 100
    nstart = int(math.ceil(1.1 * max(N, abs(mx)))) + 15
    D = np.zeros(nstart + 1, dtype=np.complex128)
    for n in range(nstart, 0, -1):
        D[n - 1] = n / mx - 1.0 / (D[n] + n / mx)

    a = np.zeros(N, dtype=np.complex128)
    b = np.zeros(N, dtype=np.complex128)
    psi_prev, psi = math.cos(x), math.sin(x)            # psi_{-1}, psi_0
    chi_prev, chi = -math.sin(x), math.cos(x)           # chi_{-1}, chi_0 (xi = psi - i chi)
    for n in range(1, N + 1):
        psi_n = (2 * n - 1) / x * psi - psi_prev
        chi_n = (2 * n - 1) / x * chi - chi_prev
        xi_n = complex(psi_n, -chi_n)
        xi_nm1 = complex(psi, -chi)
        da = D[n] / m + n / x
        db = D[n] * m + n / x
        a[n - 1] = (da * psi_n - psi) / (da * xi_n - xi_nm1)
        b[n - 1] = (db * psi_n - psi) / (db * xi_n - xi_nm1)
        psi_prev, psi = psi, psi_n
        chi_prev, chi = chi, chi_n
    return a, b


def scattering_efficiency(x: float, m: complex, extra_terms: int = 0) -> float:
    """Q_sca = (2 / x^2) sum (2n + 1)(|a_n|^2 + |b_n|^2)."""
    nmax = n_terms(x) + extra_terms
    a, b = mie_coefficients(x, m, nmax=nmax)
    n = np.arange(1, len(a) + 1)
    return float(2.0 / x ** 2 * np.sum((2 * n + 1) * (np.abs(a) ** 2 + np.abs(b) ** 2)))


def scattering_coefficient(wavelength: float, spec: ParticleSpec) -> float:
    """Scattering coefficient in 1/m for ``wavelength`` in micrometres."""
    if not wavelength > 0:
        raise InvalidParameterError("wavelength must be positive")
    if spec.number_density == 0:
        return 0.0
    x = 2.0 * math.pi * spec.radius / wavelength
    area = math.pi * (spec.radius * 1e-6) ** 2
    return spec.number_density * area * scattering_efficiency(x, spec.refractive_index)


def spectrum_sweep(lam_min: float, lam_max: float, steps: int, spec: ParticleSpec):
    """Log-spaced ``(wavelength, beta)`` rows."""
    if not (0 < lam_min < lam_max) or steps < 2:
        raise InvalidParameterError("need 0 < lam_min < lam_max and steps >= 2")
    lams = np.geomspace(lam_min, lam_max, steps)
    return [(float(l), scattering_coefficient(float(l), spec)) for l in lams]


def sweep_csv(rows, spec: ParticleSpec) -> str:
    out = io.StringIO()
    m = spec.refractive_index
    out.write(f"# radius_um={spec.radius!r} refractive_index={m.real!r}{m.imag:+}j "
              f"number_density_per_m3={spec.number_density!r}\n")
    out.write("wavelength_um,beta_per_m\n")
    for lam, beta in rows:
        out.write(f"{lam:.9e},{beta:.9e}\n")
    return out.getvalue()


def band_mean(lam_lo: float, lam_hi: float, spec: ParticleSpec, steps: int = 64) -> float:
    return float(np.mean([b for _, b in spectrum_sweep(lam_lo, lam_hi, steps, spec)]))
