import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaporpairs.config import (RB87_MASS, RB_D1_DIPOLE, ExperimentConfig, build_config, doppler_fwhm,
                               dump_config, fingerprint, load_config, parse_quantity, power_to_rabi,
                               vapor_density)
from vaporpairs.errors import ConfigError

A1 = "lasers: {pump_power: 6 mW, coupling_power: 27 mW}"

# Oracles evaluated by hand before coding (see comments for the inputs).
# Nesmeyanov liquid branch at 336.15 K: P = 1.11395e-5 torr, n = 0.99 P / kT
DENSITY_63C = 3.168006e17
# I = 2P/(pi w^2) with P = 27 mW, w = 0.7 mm; E = sqrt(2I/(c eps0)); Omega = d E / hbar
OMEGA_C_27MW = 7.1406519e8


def test_empty_document_requires_pump():
    with pytest.raises(ConfigError, match="pump_power"):
        load_config("")


def test_operating_point_is_valid():
    cfg = load_config("cell: {temperature: 336.15 K}\n" + A1)
    assert cfg.lasers.pump_power == pytest.approx(6e-3)
    assert cfg.lasers.coupling_power == pytest.approx(27e-3)
    assert cfg.cell.temperature == 336.15


def test_celsius_input():
    cfg = load_config("cell: {temperature: 63 degC}\n" + A1)
    assert cfg.cell.temperature == pytest.approx(336.15)


def test_transmission_bound_names_field():
    with pytest.raises(ConfigError, match="FilterConfig.transmission"):
        load_config(A1 + "\nfilters: {anti_stokes: {transmission: 1.3}}")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        load_config(A1 + "\ncell: {lenght: 1 cm}")


def test_bad_unit_rejected():
    with pytest.raises(ConfigError, match="unit"):
        load_config("lasers: {pump_power: 6 ns, coupling_power: 27 mW}")


def test_malformed_yaml():
    with pytest.raises(ConfigError, match="malformed"):
        load_config("lasers: [unclosed")


def test_overlay_merges_nested_sections():
    cfg = load_config(A1, "lasers: {coupling_power: 9 mW}")
    assert cfg.lasers.pump_power == pytest.approx(6e-3)
    assert cfg.lasers.coupling_power == pytest.approx(9e-3)


def test_dump_roundtrip_is_exact():
    cfg = load_config(A1 + "\ndensity_override: 1.5e16\nnoise: {leakage_s: 12 kHz}")
    again = load_config(dump_config(cfg))
    assert again == cfg
    assert fingerprint(again) == fingerprint(cfg)


def test_fingerprint_tracks_values():
    a = load_config(A1)
    b = a.with_values(**{"lasers.coupling_power": 9e-3})
    assert fingerprint(a) != fingerprint(b)
    assert len(fingerprint(a)) == 16


def test_with_values_validates():
    cfg = load_config(A1)
    with pytest.raises(ConfigError):
        cfg.with_values(**{"detectors.quantum_efficiency": 1.5})
    with pytest.raises(ConfigError, match="unknown"):
        cfg.with_values(**{"lasers.nope": 1.0})


@pytest.mark.parametrize("text,dim,value", [
    ("6 mW", "power", 6e-3), ("0.5 inch", "length", 0.0127), ("80 MHz", "frequency", 80e6),
    ("1 MHz", "angular_frequency", 2 * math.pi * 1e6), ("22 ns", "time", 22e-9), ("30 %", "fraction", 0.3),
    ("0.1 deg", "angle", math.radians(0.1)), ("3e11 cm^-3", "density", 3e17), (7, "power", 7.0),
])
def test_parse_quantity(text, dim, value):
    assert parse_quantity(text, dim) == pytest.approx(value, rel=1e-12)


def test_parse_quantity_rejects_bool():
    with pytest.raises(ConfigError):
        parse_quantity(True, "power")


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1.0), st.floats(min_value=1e-6, max_value=1.0))
def test_power_roundtrip_property(pump, coupling):
    cfg = build_config({"lasers": {"pump_power": pump, "coupling_power": coupling}})
    assert load_config(dump_config(cfg)) == cfg


# vapor density

def test_vapor_density_oracle():
    assert vapor_density(336.15, 0.99) == pytest.approx(DENSITY_63C, rel=1e-6)


def test_vapor_density_against_alcock_form():
    # independent correlation, log10(P/atm) = 4.312 - 4040/T for the liquid;
    # the two published fits differ by ~35% here
    p_alcock = 10 ** (4.312 - 4040 / 336.15) * 101325
    n_alcock = 0.99 * p_alcock / (1.380649e-23 * 336.15)
    assert 0.6 < vapor_density(336.15, 0.99) / n_alcock < 1.0


def test_vapor_density_limits():
    assert vapor_density(336.15, 0.0) == 0.0
    with pytest.raises(ConfigError):
        vapor_density(200.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=274, max_value=440), st.floats(min_value=0.1, max_value=9.0))
def test_vapor_density_monotone(t, dt):
    assert vapor_density(t + dt) > vapor_density(t)


# Rabi frequency and Doppler width

def test_rabi_oracle():
    assert power_to_rabi(27e-3, 1.4e-3, RB_D1_DIPOLE) == pytest.approx(OMEGA_C_27MW, rel=1e-6)


def test_rabi_scaling():
    assert power_to_rabi(0.0, 1.4e-3, RB_D1_DIPOLE) == 0.0
    a = power_to_rabi(1e-3, 1.4e-3, RB_D1_DIPOLE)
    assert power_to_rabi(4e-3, 1.4e-3, RB_D1_DIPOLE) == pytest.approx(2 * a, rel=1e-12)


def test_doppler_width():
    fwhm = doppler_fwhm(336.15, 795e-9, RB87_MASS)
    assert fwhm == pytest.approx(531.2e6, rel=1e-3)
    assert fwhm == pytest.approx(530e6, rel=0.01)
    assert doppler_fwhm(0.0, 795e-9, RB87_MASS) == 0.0
    assert doppler_fwhm(336.15, 780e-9, RB87_MASS) / fwhm == pytest.approx(795 / 780, rel=1e-12)


def test_channel_efficiencies_from_caption():
    cfg = load_config(A1)
    assert cfg.channel_efficiency("s") == pytest.approx(0.8 * 0.8 * 0.5)
    assert cfg.channel_efficiency("as") == pytest.approx(0.8 * 0.3 * 0.5)


def test_density_override():
    cfg = load_config(A1 + "\ndensity_override: 2e16")
    assert cfg.density == 2e16
    assert isinstance(cfg, ExperimentConfig)
