"""Joint spectral amplitude, two-photon waveform and the headline metrics."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from . import spectral
from .config import ExperimentConfig, fingerprint, thermal_velocity
from .errors import NumericalError


@dataclass(frozen=True, eq=False)
class JointSpectralAmplitude:
    grid: np.ndarray
    values: np.ndarray
    config_fingerprint: str = ""

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def norm(self) -> float:
        """(1/2pi) sum |JSA|^2 d(delta)."""
        return float(np.sum(np.abs(self.values) ** 2) * self.step / (2 * math.pi))


@dataclass(frozen=True, eq=False)
class BiphotonWaveform:
    tau_grid: np.ndarray
    psi: np.ndarray
    config_fingerprint: str = ""

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    @property
    def step(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])

    def norm(self) -> float:
        return float(np.sum(self.intensity) * self.step)

    def rate_density(self, pair_rate: float) -> np.ndarray:
        """|psi|^2 scaled to pairs/s per second of delay."""
        return self.intensity / self.norm() * pair_rate


@dataclass(frozen=True)
class WaveformMetrics:
    tau_b: float
    fit_stderr: float
    one_over_e_time: float
    bandwidth: float
    peak_time: float
    pair_rate: float
    spectral_fwhm: float
    config_fingerprint: str = ""

    @property
    def time_bandwidth_product(self) -> float:
        return self.one_over_e_time * self.spectral_fwhm

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["time_bandwidth_product"] = self.time_bandwidth_product
        return d


# ---------------------------------------------------------------------------
# spectrum

def eit_width_estimate(cfg: ExperimentConfig, p: spectral.MediumParams) -> float:
    """Rough HWHM (rad/s) of the Doppler-broadened transparency window.

    Only used to size the detuning grid.
    """
    sigma_u = abs(p.k_as) * thermal_velocity(cfg.cell.temperature, cfg.species.mass)
    return p.gamma12 + p.omega_c ** 2 / (4 * (p.gamma13 + math.sqrt(2 * math.pi) * sigma_u))


def make_grid(cfg: ExperimentConfig, p: Optional[spectral.MediumParams] = None) -> np.ndarray:
    p = p or spectral.medium_params(cfg)
    if p.omega_c <= 0:
        raise NumericalError("EIT window unresolvable: coupling Rabi frequency is zero")
    width = eit_width_estimate(cfg, p)
    span = cfg.model.grid_span or max(40 * 2 * width, 2 * math.pi * 1e9)
    points = cfg.model.grid_points
    # At least four samples per transparency half-width.
    while span / points > width / 4:
        points *= 2
        if points > 2 ** 22:
            raise NumericalError("EIT window unresolvable on any practical grid")
    return spectral.detuning_grid(span, points)


def joint_spectrum(cfg: ExperimentConfig, grid: Optional[np.ndarray] = None, *,
                   response: Optional[spectral.MediumResponse] = None) -> JointSpectralAmplitude:
    p = spectral.medium_params(cfg)
    if grid is None:
        grid = make_grid(cfg, p)
    m = cfg.model
    if response is None:
        response = spectral.averaged_response(
            p, grid, cfg.cell.temperature, cfg.species.mass,
            method=m.doppler_method, order=m.quadrature_order,
            include_stokes=m.include_stokes_dispersion)
    k_as = spectral.wavevector(response.chi_as, p.omega_as0, "k_as")
    k_s = spectral.wavevector(response.chi_s, p.omega_s0, "k_s")
    offset = 0.0
    if m.alignment_correction:
        offset = spectral.alignment_correction(cfg.lasers.alignment_angle, cfg.species.d1_wavelength)
    dk = spectral.phase_mismatch(k_as, k_s, p, offset)
    phi = spectral.longitudinal_profile(dk, k_as, cfg.cell.length)
    kappa = spectral.coupling_constant(cfg, p, response.chi3)
    filt = (spectral.filter_amplitude(grid, cfg.filters.anti_stokes)
            * spectral.filter_amplitude(-grid, cfg.filters.stokes))
    values = kappa * phi.values * filt
    if not np.all(np.isfinite(values)):
        raise NumericalError("non-finite joint spectral amplitude")
    return JointSpectralAmplitude(np.asarray(grid), values, fingerprint(cfg))


def spectral_fwhm(jsa: JointSpectralAmplitude) -> float:
    """FWHM of |JSA|^2 in Hz, with linear interpolation at the half-power points."""
    y = np.abs(jsa.values) ** 2
    return _width_at(jsa.grid, y, 0.5) / (2 * math.pi)


def _width_at(x, y, fraction):
    i = int(np.argmax(y))
    thr = y[i] * fraction
    above = np.nonzero(y >= thr)[0]
    lo, hi = above[0], above[-1]
    if lo == 0 or hi == len(y) - 1:
        raise NumericalError("no crossing found inside the grid")
    left = x[lo - 1] + (thr - y[lo - 1]) / (y[lo] - y[lo - 1]) * (x[lo] - x[lo - 1])
    right = x[hi] + (y[hi] - thr) / (y[hi] - y[hi + 1]) * (x[hi + 1] - x[hi])
    return float(right - left)


# ---------------------------------------------------------------------------
# waveform

def waveform_from_spectrum(jsa: JointSpectralAmplitude, min_span_factor: float = 10.0) -> BiphotonWaveform:
    """psi(tau) = (1/2pi) sum JSA(delta) exp(-i delta tau) d(delta) via FFT."""
    n = len(jsa.grid)
    step = jsa.step
    dtau = 2 * math.pi / (n * step)
    m = np.arange(n) - n // 2
    tau = m * dtau
    spec = np.fft.fft(jsa.values)
    # index m of the FFT output sits at position m mod n
    spec = spec[np.mod(m, n)]
    psi = np.exp(-1j * jsa.grid[0] * tau) * spec * step / (2 * math.pi)
    wf = BiphotonWaveform(tau, psi, jsa.config_fingerprint)
    if np.any(wf.intensity > 0):
        width = correlation_time_1e(wf)
        if tau[-1] - tau[0] < min_span_factor * width:
            raise NumericalError(
                f"delay span {tau[-1] - tau[0]:.3g} s shorter than {min_span_factor}x the "
                f"correlation time {width:.3g} s; refine the detuning grid")
    return wf


def correlation_time_1e(waveform: BiphotonWaveform) -> float:
    """Width between the first and last crossings of peak/e of |psi|^2."""
    y = waveform.intensity
    if not np.any(y > 0):
        raise NumericalError("no crossing found: waveform is identically zero")
    return _width_at(waveform.tau_grid, y, 1 / math.e)


def fit_decay(tau, intensity=None, fit_window: Optional[Tuple[float, float]] = None,
              background: float = 0.0, counts: bool = False) -> Tuple[float, float]:
    """Decay constant of an exponential tail and its standard error.

    ``tau`` may be a BiphotonWaveform, in which case ``intensity`` is taken
    from it.  Smooth data use weighted least squares on log-intensity; with
    ``counts=True`` a Poisson likelihood with the fixed ``background`` per
    bin is maximized instead.  The default window runs from 5 ns past the
    peak to the point where the signal falls to twice the background (or to
    1e-3 of the peak when there is no background).
    """
    if isinstance(tau, BiphotonWaveform):
        tau, intensity = tau.tau_grid, tau.intensity
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(intensity, dtype=float)
    sel = _fit_selection(tau, y, fit_window, background)
    if sel.sum() < 10:
        raise NumericalError(f"degenerate fit window: {int(sel.sum())} points (need >= 10)")
    t, yy = tau[sel], y[sel]
    if counts:
        return _poisson_decay_fit(t, yy, background)
    signal = yy - background
    ok = signal > 0
    if ok.sum() < 10:
        raise NumericalError("non-decaying data: too few positive points in window")
    t, signal = t[ok], signal[ok]
    w = signal / signal.max()
    coef, cov = np.polyfit(t - t[0], np.log(signal), 1, w=np.sqrt(w), cov="unscaled")
    slope = coef[0]
    if not slope < 0:
        raise NumericalError(f"non-decaying data: fitted tau_b = {-1 / slope if slope else math.inf:.3g} s")
    resid = np.log(signal) - np.polyval(coef, t - t[0])
    dof = max(len(t) - 2, 1)
    scale = float(np.sum(w * resid ** 2) / dof)
    var_slope = cov[0, 0] * scale
    tau_b = -1.0 / slope
    return float(tau_b), float(math.sqrt(max(var_slope, 0.0)) / slope ** 2)


def _fit_selection(tau, y, window, background):
    if window is not None:
        lo, hi = window
        return (tau >= lo) & (tau <= hi)
    ipk = int(np.argmax(y - background))
    peak = y[ipk] - background
    if peak <= 0:
        raise NumericalError("non-decaying data: no signal above background")
    start = tau[ipk] + 5e-9
    threshold = 2 * background if background > 0 else 1e-3 * peak
    after = np.nonzero((tau > start) & (y <= threshold))[0]
    stop = tau[after[0]] if len(after) else tau[-1]
    return (tau >= start) & (tau < stop)


def _poisson_decay_fit(t, n, background):
    t0 = t[0]
    x = t - t0
    sig = np.maximum(n - background, 1e-9)
    guess = np.polyfit(x, np.log(sig), 1, w=np.sqrt(sig / sig.max()))
    tau0 = -1 / guess[0] if guess[0] < 0 else (x[-1] - x[0]) / 3

    def nll(theta):
        amp, rate = math.exp(theta[0]), theta[1]
        mu = amp * np.exp(-rate * x) + background
        return float(np.sum(mu - n * np.log(mu)))

    res = optimize.minimize(nll, [math.log(max(sig[0], 1e-9)), 1 / tau0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 4000})
    amp, rate = math.exp(res.x[0]), res.x[1]
    if not rate > 0:
        raise NumericalError("non-decaying data: fitted decay rate is not positive")
    # Fisher information for (log amp, rate).
    s = amp * np.exp(-rate * x)
    mu = s + background
    d_logamp = s
    d_rate = -x * s
    info = np.array([[np.sum(d_logamp * d_logamp / mu), np.sum(d_logamp * d_rate / mu)],
                     [np.sum(d_rate * d_logamp / mu), np.sum(d_rate * d_rate / mu)]])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular Fisher information in decay fit") from exc
    tau_b = 1 / rate
    return float(tau_b), float(math.sqrt(max(cov[1, 1], 0.0)) / rate ** 2)


# ---------------------------------------------------------------------------
# rates and metrics

@functools.lru_cache(maxsize=64)
def _anchor_norm(cfg: ExperimentConfig) -> float:
    return joint_spectrum(cfg).norm()


def rate_constant(cfg: ExperimentConfig) -> float:
    """Pairs/s per unit JSA norm, fixed by the configured rate anchor."""
    cal = cfg.calibration
    if cal.rate_constant is not None:
        return cal.rate_constant
    anchor = cfg.with_values(**{"lasers.pump_power": cal.rate_anchor_pump,
                                "lasers.coupling_power": cal.rate_anchor_coupling})
    norm = _anchor_norm(anchor)
    if norm <= 0:
        raise NumericalError("rate anchor has a vanishing joint spectrum")
    return cal.rate_anchor_value / norm


def pair_rate(jsa: JointSpectralAmplitude, cfg: ExperimentConfig) -> float:
    """Generated pair rate (pairs/s) before any detection losses."""
    norm = jsa.norm()
    if norm == 0:
        return 0.0
    return rate_constant(cfg) * norm


def waveform_metrics(cfg: ExperimentConfig, jsa: JointSpectralAmplitude,
                     waveform: BiphotonWaveform) -> WaveformMetrics:
    tau_b, stderr = fit_decay(waveform)
    return WaveformMetrics(
        tau_b=tau_b,
        fit_stderr=stderr,
        one_over_e_time=correlation_time_1e(waveform),
        bandwidth=1 / (2 * math.pi * tau_b),
        peak_time=float(waveform.tau_grid[np.argmax(waveform.intensity)]),
        pair_rate=pair_rate(jsa, cfg),
        spectral_fwhm=spectral_fwhm(jsa),
        config_fingerprint=jsa.config_fingerprint,
    )


def simulate(cfg: ExperimentConfig, grid: Optional[np.ndarray] = None):
    """JSA, waveform and metrics for one configuration."""
    jsa = joint_spectrum(cfg, grid)
    wf = waveform_from_spectrum(jsa)
    return jsa, wf, waveform_metrics(cfg, jsa, wf)


def write_waveform_csv(path, waveform: BiphotonWaveform) -> None:
    from ._io import atomic_write_text

    lines = [f"# config={waveform.config_fingerprint}", "tau_ns,re_psi,im_psi,intensity"]
    for t, v, i in zip(waveform.tau_grid, waveform.psi, waveform.intensity):
        lines.append(f"{t * 1e9:.6f},{v.real:.12e},{v.imag:.12e},{i:.12e}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_jsa_csv(path, jsa: JointSpectralAmplitude) -> None:
    spectral.write_spectrum_csv(path, spectral.ComplexSpectrum(jsa.grid, jsa.values, "jsa"),
                                jsa.config_fingerprint)
