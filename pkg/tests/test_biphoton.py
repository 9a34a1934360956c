import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import point_config
from vaporpairs import biphoton, spectral
from vaporpairs.errors import NumericalError

TWO_PI = 2 * math.pi


def jsa_of(values, grid):
    return biphoton.JointSpectralAmplitude(grid, values.astype(complex))


@pytest.fixture(scope="module")
def cfg():
    return point_config("a1")


# joint spectrum

def test_fwhm_shrinks_with_coupling(cfg):
    widths = []
    for pc in (27e-3, 9e-3, 3e-3, 1e-3):
        jsa = biphoton.joint_spectrum(cfg.with_values(**{"lasers.coupling_power": pc}))
        widths.append(biphoton.spectral_fwhm(jsa))
    assert all(a > b for a, b in zip(widths, widths[1:]))


def test_pump_doubling_doubles_intensity(cfg):
    grid = biphoton.make_grid(cfg)
    a = biphoton.joint_spectrum(cfg, grid)
    b = biphoton.joint_spectrum(cfg.with_values(**{"lasers.pump_power": 12e-3}), grid)
    ok = np.abs(a.values) > 1e-6 * np.abs(a.values).max()
    ratio = np.abs(b.values[ok]) ** 2 / np.abs(a.values[ok]) ** 2
    assert np.allclose(ratio, 2.0, rtol=1e-9)


def test_zero_density_gives_zero_jsa(cfg):
    jsa = biphoton.joint_spectrum(cfg.with_values(density_override=0.0))
    assert not np.any(jsa.values)
    assert biphoton.pair_rate(jsa, cfg) == 0.0


def test_zero_pump_gives_zero_rate(cfg):
    jsa = biphoton.joint_spectrum(cfg.with_values(**{"lasers.pump_power": 0.0}))
    assert biphoton.pair_rate(jsa, cfg) == 0.0


def test_zero_coupling_is_unresolvable(cfg):
    with pytest.raises(NumericalError, match="unresolvable"):
        biphoton.make_grid(cfg.with_values(**{"lasers.coupling_power": 0.0}))


def test_rate_anchor(cfg):
    _, _, m = biphoton.simulate(cfg.with_values(**{"lasers.pump_power": 7e-3}))
    assert m.pair_rate == pytest.approx(2000.0, rel=1e-9)


def test_rate_anchor_without_fixed_constant():
    # no stored rate constant: the anchor (7 mW -> 2000/s) fixes it on the fly
    cfg = point_config("a1", calibrated=False)
    _, _, m = biphoton.simulate(cfg.with_values(**{"lasers.pump_power": 7e-3}))
    assert m.pair_rate == pytest.approx(2000.0, rel=1e-9)


def test_grid_resolves_window(cfg):
    grid = biphoton.make_grid(cfg)
    p = spectral.medium_params(cfg)
    assert grid[1] - grid[0] <= biphoton.eit_width_estimate(cfg, p) / 4
    assert len(grid) & (len(grid) - 1) == 0


# waveform

def test_flat_spectrum_gives_spike():
    grid = spectral.detuning_grid(TWO_PI * 1e9, 4096)
    wf = biphoton.waveform_from_spectrum(jsa_of(np.ones(4096), grid), min_span_factor=0)
    i = int(np.argmax(wf.intensity))
    assert abs(wf.tau_grid[i]) <= wf.step
    assert wf.intensity[i] > 0.99 * wf.intensity.sum()


def test_lorentzian_fourier_pair():
    gamma = TWO_PI * 1.6e6
    grid = spectral.detuning_grid(TWO_PI * 2e9, 2 ** 16)
    wf = biphoton.waveform_from_spectrum(jsa_of(1 / (gamma - 1j * grid), grid))
    tau_b, _ = biphoton.fit_decay(wf)
    assert tau_b == pytest.approx(1 / (2 * gamma), rel=0.01)
    # positive delays carry the waveform
    assert wf.tau_grid[np.argmax(wf.intensity)] >= -wf.step


def test_parseval(cfg):
    jsa, wf, _ = biphoton.simulate(cfg)
    assert wf.norm() == pytest.approx(jsa.norm(), rel=1e-10)


def test_short_delay_span_rejected():
    gamma = TWO_PI * 1e6
    grid = spectral.detuning_grid(TWO_PI * 2e9, 256)
    with pytest.raises(NumericalError, match="refine"):
        biphoton.waveform_from_spectrum(jsa_of(1 / (gamma - 1j * grid), grid))


# decay fit and 1/e time

def test_fit_exact_exponential():
    tau = np.arange(0, 2000) * 0.5e-9
    tau_b, err = biphoton.fit_decay(tau, np.exp(-tau / 50e-9))
    assert tau_b == pytest.approx(50e-9, rel=1e-6)
    assert err < 1e-12


def test_fit_poisson_counts_closure():
    # 600 s of counts in 1 ns bins
    rng = np.random.default_rng(5)
    t = np.arange(-100, 900) * 1e-9 + 0.5e-9
    floor = 20.0
    mu = floor + 800.0 * np.exp(-np.clip(t, 0, None) / 50e-9) * (t > 0)
    counts = rng.poisson(mu).astype(float)
    tau_b, err = biphoton.fit_decay(t, counts, background=floor, counts=True)
    assert abs(tau_b - 50e-9) <= 3 * err
    assert err < 2e-9


def test_fit_rejects_growth_and_tiny_windows():
    tau = np.arange(0, 100) * 1e-9
    with pytest.raises(NumericalError, match="non-decaying|degenerate"):
        biphoton.fit_decay(tau, np.exp(tau / 50e-9), fit_window=(0, 1e-7))
    with pytest.raises(NumericalError, match="degenerate"):
        biphoton.fit_decay(tau, np.exp(-tau / 50e-9), fit_window=(0, 3e-9))


def test_one_over_e_pure_exponential():
    dt = 0.01e-9
    tau = np.arange(-1000, 100000) * dt
    psi = np.where(tau >= 0, np.exp(-tau / 100e-9), 0.0)
    wf = biphoton.BiphotonWaveform(tau, psi)
    # |psi|^2 decays with 50 ns; the leading edge is one sample wide
    assert biphoton.correlation_time_1e(wf) == pytest.approx(50e-9, abs=dt)


def brute_force_crossings(f, lo, hi, level, n=2_000_001):
    x = np.linspace(lo, hi, n)
    above = np.nonzero(f(x) >= level)[0]
    return x[above[-1]] - x[above[0]]


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=2e-9, max_value=30e-9), st.floats(min_value=10e-9, max_value=120e-9))
def test_one_over_e_with_linear_rise(rise, tau_b):
    def intensity(t):
        up = np.clip(t / rise, 0, 1)
        return np.where(t < rise, up, np.exp(-(t - rise) / tau_b))

    dt = 0.02e-9
    tau = np.arange(-2000, 60000) * dt
    wf = biphoton.BiphotonWaveform(tau, np.sqrt(intensity(tau)))
    oracle = brute_force_crossings(intensity, 0, 1.2e-6, 1 / math.e)
    assert biphoton.correlation_time_1e(wf) == pytest.approx(oracle, abs=2 * dt)
    assert biphoton.correlation_time_1e(wf) == pytest.approx(tau_b + rise * (1 - 1 / math.e), abs=2 * dt)


def test_zero_waveform_has_no_crossing():
    wf = biphoton.BiphotonWaveform(np.arange(10) * 1e-9, np.zeros(10))
    with pytest.raises(NumericalError, match="no crossing"):
        biphoton.correlation_time_1e(wf)


# calibrated operating points

def test_calibrated_points(cfg):
    times = []
    for pc in (27e-3, 9e-3, 1e-3):
        _, _, m = biphoton.simulate(cfg.with_values(**{"lasers.coupling_power": pc}))
        assert m.bandwidth == 1 / (TWO_PI * m.tau_b)
        times.append(m.one_over_e_time)
    assert times[0] == pytest.approx(47e-9, rel=0.25)
    assert times[1] == pytest.approx(60e-9, rel=0.25)
    assert times[2] == pytest.approx(94e-9, rel=0.25)


def test_metrics_dict_roundtrip(cfg):
    _, _, m = biphoton.simulate(cfg)
    d = m.to_dict()
    assert d["time_bandwidth_product"] == pytest.approx(m.one_over_e_time * m.spectral_fwhm)
    assert d["config_fingerprint"] == m.config_fingerprint != ""


def test_csv_writers(tmp_path, cfg):
    jsa, wf, _ = biphoton.simulate(cfg)
    biphoton.write_waveform_csv(tmp_path / "w.csv", wf)
    biphoton.write_jsa_csv(tmp_path / "j.csv", jsa)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == f"# config={wf.config_fingerprint}"
    assert lines[1] == "tau_ns,re_psi,im_psi,intensity"
    assert len(lines) == len(wf.tau_grid) + 2
    data = np.loadtxt(tmp_path / "j.csv", delimiter=",", comments="#", skiprows=2)
    assert data.shape == (len(jsa.grid), 3)
