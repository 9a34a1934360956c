"""Doppler-averaged linear and third-order response of the double-Lambda medium.

Geometry along the cell axis z: pump and Stokes travel along +z, coupling and
anti-Stokes along -z.  An atom with velocity v sees a field of signed
wavenumber k detuned by -k*v.

Detunings are angular frequencies.  ``delta`` is the anti-Stokes offset from
its line center; the Stokes partner sits at ``-delta`` by energy
conservation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_hermite, wofz

from .config import C_LIGHT, EPS0, HBAR, ChannelFilter, ExperimentConfig, peak_field, power_to_rabi, thermal_velocity
from .errors import NumericalError

LABELS = ("chi_as", "chi_s", "chi3", "k_as", "k_s", "delta_k", "phi", "jsa", "transmission")


@dataclass(frozen=True, eq=False)
class ComplexSpectrum:
    detuning_grid: np.ndarray
    values: np.ndarray
    label: str

    def __post_init__(self):
        grid = np.asarray(self.detuning_grid, dtype=float)
        values = np.asarray(self.values)
        object.__setattr__(self, "detuning_grid", grid)
        object.__setattr__(self, "values", values)
        if self.label not in LABELS:
            raise ValueError(f"unknown spectrum label {self.label!r}")
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-D of equal length")
        step = np.diff(grid)
        if len(grid) < 2 or np.any(step <= 0):
            raise ValueError("detuning grid must be strictly increasing")
        if not np.allclose(step, step[0], rtol=1e-9, atol=0):
            raise ValueError("detuning grid must be uniform")
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"non-finite values in {self.label} spectrum")

    @property
    def step(self) -> float:
        return float(self.detuning_grid[1] - self.detuning_grid[0])

    def reversed(self) -> np.ndarray:
        """Values at -delta; exact because grids are symmetric about zero."""
        return self.values[::-1]


def detuning_grid(span: float, points: int) -> np.ndarray:
    """Uniform grid of ``points`` samples symmetric about zero, covering ``span``."""
    if points < 2 or span <= 0:
        raise ValueError("need span > 0 and at least two points")
    step = span / points
    return (np.arange(points) - (points - 1) / 2) * step


@dataclass(frozen=True)
class VelocityQuadrature:
    """Gaussian-measure rule: E[f(v)] ~ sum(weights * f(sigma_v * nodes)).

    Nodes are standard-normal abscissae; they are scaled by the thermal
    velocity at use.
    """

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    order: int = 0

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")
        if not np.allclose(self.nodes, -self.nodes[::-1], rtol=1e-10, atol=1e-12):
            raise ValueError("quadrature nodes must be symmetric about 0")


def gauss_hermite(order: int = 128) -> VelocityQuadrature:
    x, w = roots_hermite(order)
    w = w / w.sum()
    return VelocityQuadrature(nodes=math.sqrt(2.0) * x, weights=w, order=order)


@dataclass(frozen=True)
class MediumParams:
    density: float
    gamma13: float
    gamma12: float
    omega_c: float
    delta_p: float
    k_p: float
    k_c: float
    k_s: float
    k_as: float
    delta_c: float = 0.0
    dipole_as: float = 1.0
    dipole_s: float = 1.0
    dipole_c: float = 1.0
    dipole_p: float = 1.0
    omega_as0: float = 0.0
    omega_s0: float = 0.0

    def __post_init__(self):
        if self.gamma13 <= 0:
            raise ValueError("gamma13 must be > 0")
        if self.gamma12 < 0:
            raise ValueError("gamma12 must be >= 0")
        if self.k_p * self.k_c >= 0:
            raise ValueError("pump and coupling must counter-propagate (k_p * k_c < 0)")
        if self.k_s * self.k_as >= 0:
            raise ValueError("Stokes and anti-Stokes must counter-propagate (k_s * k_as < 0)")

    @property
    def chi_scale_as(self) -> float:
        return self.density * self.dipole_as ** 2 / (EPS0 * HBAR)

    @property
    def chi_scale_s(self) -> float:
        return self.density * self.dipole_s ** 2 / (EPS0 * HBAR)

    @property
    def chi3_scale(self) -> float:
        return self.density * self.dipole_as * self.dipole_s * self.dipole_c * self.dipole_p / (EPS0 * HBAR ** 3)


def medium_params(cfg: ExperimentConfig) -> MediumParams:
    sp, las = cfg.species, cfg.lasers
    omega_as0 = 2 * math.pi * C_LIGHT / sp.d1_wavelength
    omega_c0 = omega_as0 - sp.ground_hyperfine_splitting + las.coupling_detuning
    omega_14 = 2 * math.pi * C_LIGHT / sp.d2_wavelength
    omega_p = omega_14 + las.pump_detuning
    omega_s0 = omega_p + omega_c0 - omega_as0
    return MediumParams(
        density=cfg.density,
        gamma13=sp.gamma_d1 / 2,
        gamma12=cfg.cell.ground_decoherence_rate,
        omega_c=power_to_rabi(las.coupling_power, las.coupling_diameter, sp.coupling_dipole),
        delta_p=las.pump_detuning,
        delta_c=las.coupling_detuning,
        k_p=omega_p / C_LIGHT,
        k_c=-omega_c0 / C_LIGHT,
        k_s=omega_s0 / C_LIGHT,
        k_as=-omega_as0 / C_LIGHT,
        dipole_as=sp.dipole_moment_d1,
        dipole_s=sp.dipole_moment_d2,
        dipole_c=sp.coupling_dipole,
        dipole_p=sp.dipole_moment_d2,
        omega_as0=omega_as0,
        omega_s0=omega_s0,
    )


# ---------------------------------------------------------------------------
# single velocity class

def eit_denominator(delta, velocity, p: MediumParams):
    """(delta1 + i g13)(delta2 + i g12) - Omega_c^2 / 4 for one velocity class."""
    d1 = delta - p.k_as * velocity + 1j * p.gamma13
    d2 = delta - p.delta_c - (p.k_as - p.k_c) * velocity + 1j * p.gamma12
    return d1 * d2 - p.omega_c ** 2 / 4


def chi_eit(delta, velocity, p: MediumParams):
    d2 = delta - p.delta_c - (p.k_as - p.k_c) * velocity + 1j * p.gamma12
    return -p.chi_scale_as * d2 / eit_denominator(delta, velocity, p)


def chi_stokes(delta, velocity, p: MediumParams):
    """Far-detuned two-level response seen by the Stokes field at offset ``delta``."""
    return -p.chi_scale_s / (delta + p.delta_p + p.delta_c - p.k_s * velocity + 1j * p.gamma13)


def chi3_sfwm(delta, velocity, p: MediumParams):
    pump_leg = p.delta_p - p.k_p * velocity + 1j * p.gamma13
    return -p.chi3_scale / (pump_leg * eit_denominator(delta, velocity, p))


# ---------------------------------------------------------------------------
# Doppler averaging

def doppler_average(kernel: Callable, temperature: float, mass: float, grid: np.ndarray,
                    quad: VelocityQuadrature, label: str = "chi_as") -> ComplexSpectrum:
    """Average ``kernel(delta, v)`` over the 1D Maxwell-Boltzmann distribution."""
    sigma_v = thermal_velocity(temperature, mass) if temperature > 0 else 0.0
    grid = np.asarray(grid, dtype=float)
    total = np.zeros(grid.shape, dtype=complex)
    for x, w in zip(quad.nodes, quad.weights):
        value = kernel(grid, sigma_v * x)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite kernel output at velocity node {sigma_v * x:.4g} m/s")
        total += w * value
    return ComplexSpectrum(grid, total, label)


def gaussian_mean_inverse(root, sigma: float):
    """E[1 / (v - root)] for v ~ Normal(0, sigma), via the Faddeeva function."""
    root = np.asarray(root, dtype=complex)
    if sigma == 0:
        return -1.0 / root
    scale = math.sqrt(2.0) * sigma
    z = root / scale
    upper = z.imag >= 0
    zz = np.where(upper, z, np.conj(z))
    val = 1j * math.sqrt(math.pi) * wofz(zz) / scale
    return np.where(upper, val, np.conj(val))


def _quadratic_roots(a2, a1, a0):
    """Roots of a2 v^2 + a1 v + a0 with the cancellation-free formula."""
    disc = np.sqrt(a1 * a1 - 4 * a2 * a0 + 0j)
    sign = np.where((np.conj(a1) * disc).real >= 0, 1.0, -1.0)
    q = -0.5 * (a1 + sign * disc)
    return q / a2, a0 / q


def _average_partial_fractions(numerator, roots, lead, sigma):
    """E[numerator(v) / (lead * prod(v - r_j))] assuming distinct simple roots."""
    out = 0
    for j, rj in enumerate(roots):
        denom = lead
        for i, ri in enumerate(roots):
            if i != j:
                denom = denom * (rj - ri)
        out = out + numerator(rj) / denom * gaussian_mean_inverse(rj, sigma)
    return out


def _denominator_roots(grid, p: MediumParams):
    q = p.k_as - p.k_c
    a = grid + 1j * p.gamma13
    b = grid - p.delta_c + 1j * max(p.gamma12, 1e-12 * p.gamma13)
    a2 = p.k_as * q
    a1 = -(a * q + b * p.k_as)
    a0 = a * b - p.omega_c ** 2 / 4
    r1, r2 = _quadratic_roots(a2, a1, a0)
    return (r1, r2), a2, b, q


def exact_doppler_chi_as(grid, p: MediumParams, sigma_v: float) -> np.ndarray:
    if sigma_v == 0:
        return chi_eit(grid, 0.0, p)
    roots, lead, b, q = _denominator_roots(grid, p)
    return _average_partial_fractions(lambda v: -p.chi_scale_as * (b - q * v), roots, lead, sigma_v)


def exact_doppler_chi3(grid, p: MediumParams, sigma_v: float) -> np.ndarray:
    if sigma_v == 0:
        return chi3_sfwm(grid, 0.0, p)
    roots, lead, _, _ = _denominator_roots(grid, p)
    pump_root = (p.delta_p + 1j * p.gamma13) / p.k_p
    roots = (*roots, np.full_like(roots[0], pump_root))
    return _average_partial_fractions(lambda v: -p.chi3_scale + 0 * v, roots, -p.k_p * lead, sigma_v)


def exact_doppler_chi_s(grid, p: MediumParams, sigma_v: float) -> np.ndarray:
    if sigma_v == 0:
        return chi_stokes(grid, 0.0, p)
    root = (grid + p.delta_p + p.delta_c + 1j * p.gamma13) / p.k_s
    return p.chi_scale_s / p.k_s * gaussian_mean_inverse(root, sigma_v)


@dataclass
class MediumResponse:
    chi_as: ComplexSpectrum
    chi_s: ComplexSpectrum
    chi3: ComplexSpectrum


def averaged_response(p: MediumParams, grid: np.ndarray, temperature: float, mass: float,
                      method: str = "exact", order: int = 128,
                      include_stokes: bool = True) -> MediumResponse:
    """Doppler-averaged chi_as, chi_s and chi3 on ``grid``.

    ``method="exact"`` integrates each rational kernel analytically against
    the Gaussian velocity distribution; ``"quadrature"`` uses a Gauss-Hermite
    rule of the given order.
    """
    grid = np.asarray(grid, dtype=float)
    if method == "exact":
        sigma_v = thermal_velocity(temperature, mass) if temperature > 0 else 0.0
        chi_as = ComplexSpectrum(grid, exact_doppler_chi_as(grid, p, sigma_v), "chi_as")
        chi3 = ComplexSpectrum(grid, exact_doppler_chi3(grid, p, sigma_v), "chi3")
        chi_s_vals = exact_doppler_chi_s(grid, p, sigma_v)
    elif method == "quadrature":
        quad = gauss_hermite(order)
        chi_as = doppler_average(lambda d, v: chi_eit(d, v, p), temperature, mass, grid, quad, "chi_as")
        chi3 = doppler_average(lambda d, v: chi3_sfwm(d, v, p), temperature, mass, grid, quad, "chi3")
        chi_s_vals = doppler_average(lambda d, v: chi_stokes(d, v, p), temperature, mass, grid, quad,
                                     "chi_s").values
    else:
        raise ValueError(f"unknown Doppler method {method!r}")
    if not include_stokes:
        chi_s_vals = np.zeros_like(grid, dtype=complex)
    return MediumResponse(chi_as, ComplexSpectrum(grid, chi_s_vals, "chi_s"), chi3)


# ---------------------------------------------------------------------------
# propagation

def wavevector(spectrum: ComplexSpectrum, center_frequency: float, label: Optional[str] = None) -> ComplexSpectrum:
    """k = (w0 + delta)/c * sqrt(1 + chi) on the principal branch."""
    if label is None:
        label = {"chi_as": "k_as", "chi_s": "k_s"}.get(spectrum.label, "k_as")
    n = np.sqrt(1.0 + spectrum.values.astype(complex))
    k = (center_frequency + spectrum.detuning_grid) / C_LIGHT * n
    return ComplexSpectrum(spectrum.detuning_grid, k, label)


def group_delay(k: ComplexSpectrum, length: float, at: float = 0.0) -> float:
    """L * d(Re k)/d(delta) at ``at`` by central differences on the grid."""
    slope = np.gradient(k.values.real, k.step)
    return float(length * np.interp(at, k.detuning_grid, slope))


def alignment_correction(angle: float, wavelength: float) -> float:
    """Longitudinal wavevector deficit 2*pi*(1 - cos(angle))/wavelength."""
    return 2 * math.pi * (1 - math.cos(angle)) / wavelength


def phase_mismatch(k_as: ComplexSpectrum, k_s: ComplexSpectrum, p: MediumParams,
                   offset: float = 0.0) -> ComplexSpectrum:
    """Backward-geometry mismatch relative to the line-center vacuum value.

    delta_k(d) = [Re k_as(d) - w_as0/c] - [Re k_s(-d) - w_s0/c] + offset.
    The anti-Stokes is paired with the Stokes at -d, so the slope is the sum
    of the two inverse group velocities.
    """
    if k_as.detuning_grid.shape != k_s.detuning_grid.shape or not np.allclose(
            k_as.detuning_grid, k_s.detuning_grid, rtol=0, atol=1e-9 * abs(k_as.step)):
        raise ValueError("k_as and k_s must share the same detuning grid")
    dk = (k_as.values.real - p.omega_as0 / C_LIGHT) - (k_s.reversed().real - p.omega_s0 / C_LIGHT) + offset
    return ComplexSpectrum(k_as.detuning_grid, dk.astype(complex), "delta_k")


def sinc(x):
    """sin(x)/x with sinc(0) = 1."""
    return np.sinc(np.asarray(x) / np.pi)


def longitudinal_profile(delta_k: ComplexSpectrum, absorption: ComplexSpectrum, length: float) -> ComplexSpectrum:
    """sinc(dk L/2) exp(i dk L/2) exp(-alpha L/2) with alpha = Im k_as."""
    half = delta_k.values.real * length / 2
    alpha = absorption.values.imag if np.iscomplexobj(absorption.values) else absorption.values
    phi = sinc(half) * np.exp(1j * half) * np.exp(-alpha * length / 2)
    return ComplexSpectrum(delta_k.detuning_grid, phi, "phi")


def eit_transmission(chi_as: ComplexSpectrum, length: float, center_frequency: float) -> np.ndarray:
    """Intensity transmission exp(-2 Im k L) of the anti-Stokes field."""
    k = wavevector(chi_as, center_frequency, "k_as")
    return np.exp(-2 * k.values.imag * length)


def filter_transmission(detuning, filt: ChannelFilter) -> np.ndarray:
    """Lorentzian-squared etalon line with FWHM ``filt.bandwidth``, peak 1.

    Peak transmission is booked in the detection efficiency, not here.
    """
    f = np.asarray(detuning) / (2 * math.pi)
    a = filt.bandwidth / (2 * math.sqrt(math.sqrt(2.0) - 1))
    return 1.0 / (1.0 + (f / a) ** 2) ** 2


def filter_amplitude(detuning, filt: ChannelFilter) -> np.ndarray:
    return np.sqrt(filter_transmission(detuning, filt))


def coupling_constant(cfg: ExperimentConfig, p: MediumParams, chi3: ComplexSpectrum) -> np.ndarray:
    """kappa(delta) = sqrt(w_s w_as)/(2c) * chi3 * E_p * E_c."""
    las = cfg.lasers
    e_p = peak_field(las.pump_power, las.pump_diameter)
    e_c = peak_field(las.coupling_power, las.coupling_diameter)
    return math.sqrt(p.omega_s0 * p.omega_as0) / (2 * C_LIGHT) * chi3.values * e_p * e_c


def write_spectrum_csv(path, spectrum: ComplexSpectrum, config_fingerprint: str = "") -> None:
    from ._io import atomic_write_text

    lines = [f"# label={spectrum.label} config={config_fingerprint}", "detuning_Hz,re,im"]
    hz = spectrum.detuning_grid / (2 * math.pi)
    vals = spectrum.values.astype(complex)
    lines += [f"{f:.9e},{v.real:.12e},{v.imag:.12e}" for f, v in zip(hz, vals)]
    atomic_write_text(path, "\n".join(lines) + "\n")
