"""Physical constants, atomic data and the validated experiment configuration.

Every numeric field is stored in SI units.  Configuration documents are YAML
mappings with one nested section per dataclass; a value may be a bare number
(taken as SI) or a string carrying an explicit unit such as ``"27 mW"`` or
``"63 degC"``.  Fields holding angular frequencies (rad/s) accept Hz-family
units, which are multiplied by 2*pi, so ``natural_linewidth: 6 MHz`` means
2*pi*6e6 rad/s.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml
from scipy import constants as sc

from .errors import ConfigError

HBAR = sc.hbar
C_LIGHT = sc.c
EPS0 = sc.epsilon_0
K_B = sc.k
AMU = sc.atomic_mass

RB87_MASS = 86.909180527 * AMU
RB87_GROUND_HFS = 2 * math.pi * 6.834682611e9
# Reduced D1/D2 matrix elements divided by sqrt(3) (isotropic average).
RB_D1_DIPOLE = 2.537e-29 / math.sqrt(3)
RB_D2_DIPOLE = 3.584e-29 / math.sqrt(3)

TWO_PI = 2 * math.pi


def _f(default, dim, **kw):
    return field(default=default, metadata={"dim": dim, **kw})


@dataclass(frozen=True)
class AtomicSpecies:
    mass: float = _f(RB87_MASS, "mass")
    d1_wavelength: float = _f(795e-9, "length")
    d2_wavelength: float = _f(780e-9, "length")
    natural_linewidth: float = _f(TWO_PI * 6e6, "angular_frequency")
    natural_linewidth_d1: Optional[float] = _f(None, "angular_frequency")
    natural_linewidth_d2: Optional[float] = _f(None, "angular_frequency")
    dipole_moment_d1: float = _f(RB_D1_DIPOLE, "dipole")
    dipole_moment_d2: float = _f(RB_D2_DIPOLE, "dipole")
    # Dipole used to turn coupling power into a Rabi frequency (F=2 -> F'=1).
    coupling_dipole: float = _f(RB_D1_DIPOLE, "dipole")
    ground_hyperfine_splitting: float = _f(RB87_GROUND_HFS, "angular_frequency")
    isotopic_purity: float = _f(0.99, "fraction")

    @property
    def gamma_d1(self) -> float:
        return self.natural_linewidth_d1 or self.natural_linewidth

    @property
    def gamma_d2(self) -> float:
        return self.natural_linewidth_d2 or self.natural_linewidth


@dataclass(frozen=True)
class CellConfig:
    length: float = _f(0.5 * 0.0254, "length")
    inner_diameter: float = _f(0.010, "length")
    temperature: float = _f(336.15, "temperature")
    temperature_uncertainty: float = _f(0.2, "temperature_difference")
    ground_decoherence_rate: float = _f(TWO_PI * 30e3, "angular_frequency")


@dataclass(frozen=True)
class LaserConfig:
    pump_power: float = _f(None, "power", required=True)
    coupling_power: float = _f(None, "power", required=True)
    pump_detuning: float = _f(-TWO_PI * 2.7e9, "angular_frequency")
    pump_diameter: float = _f(1.4e-3, "length")
    coupling_detuning: float = _f(0.0, "angular_frequency")
    coupling_diameter: float = _f(1.4e-3, "length")
    # 1/e^2 waist diameter of the collected biphoton mode.
    mode_waist: float = _f(250e-6, "length")
    alignment_angle: float = _f(math.radians(0.1), "angle")


@dataclass(frozen=True)
class ChannelFilter:
    bandwidth: float = _f(350e6, "frequency")
    transmission: float = _f(0.8, "fraction")
    extinction: float = _f(60.0, "decibel")
    free_spectral_range: float = _f(13.6e9, "frequency")


@dataclass(frozen=True)
class FilterConfig:
    stokes: ChannelFilter = field(default_factory=ChannelFilter)
    anti_stokes: ChannelFilter = field(
        default_factory=lambda: ChannelFilter(bandwidth=80e6, transmission=0.3, extinction=40.0)
    )


@dataclass(frozen=True)
class DetectorConfig:
    quantum_efficiency: float = _f(0.5, "fraction")
    fiber_coupling: float = _f(0.8, "fraction")
    # Typical SPCM figures; the counters' timing specs are not published with the setup.
    dead_time: float = _f(22e-9, "time")
    timing_jitter_sigma: float = _f(0.35e-9, "time")
    dark_count_rate: float = _f(25.0, "frequency")


@dataclass(frozen=True)
class NoiseModel:
    """Uncorrelated click sources, expressed as detected rates per channel.

    ``raman_background_as`` is the coupling-driven Raman rate without optical
    pumping; it is multiplied by ``optical_pumping_suppression`` when
    ``optical_pumping`` is on.  ``leakage_s`` (unpaired Stokes light) and
    ``leakage_as`` (pump-induced anti-Stokes light) are quoted at
    ``reference_pump_power`` and scale linearly with pump power.

    Raman light and unpaired Stokes light are spontaneous emission, so they are
    generated as chaotic light with intensity correlation time
    ``coherence_time`` (0 means Poissonian).  ``leakage_as`` is Poissonian.
    """

    raman_background_as: float = _f(1.1e6, "frequency")
    optical_pumping: bool = _f(True, "bool")
    optical_pumping_suppression: float = _f(0.01, "fraction")
    leakage_s: float = _f(1.05e4, "frequency")
    leakage_as: float = _f(2.8e3, "frequency")
    reference_pump_power: float = _f(6e-3, "power")
    coherence_time: float = _f(50e-9, "time")

    def raman_rate(self) -> float:
        raman = self.raman_background_as
        if self.optical_pumping:
            raman *= self.optical_pumping_suppression
        return raman

    def anti_stokes_components(self, pump_power: float) -> tuple:
        """(chaotic, poissonian) anti-Stokes noise rates in Hz."""
        return self.raman_rate(), self.leakage_as * pump_power / self.reference_pump_power

    def stokes_components(self, pump_power: float) -> tuple:
        """(chaotic, poissonian) Stokes noise rates in Hz."""
        return self.leakage_s * pump_power / self.reference_pump_power, 0.0

    def anti_stokes_rate(self, pump_power: float) -> float:
        return sum(self.anti_stokes_components(pump_power))

    def stokes_rate(self, pump_power: float) -> float:
        return sum(self.stokes_components(pump_power))


@dataclass(frozen=True)
class ModelConfig:
    """Numerical switches for the spectral and biphoton engines."""

    include_stokes_dispersion: bool = _f(True, "bool")
    doppler_method: str = _f("exact", "choice", choices=("exact", "quadrature"))
    quadrature_order: int = _f(128, "count")
    grid_points: int = _f(4096, "count")
    grid_span: Optional[float] = _f(None, "angular_frequency")
    alignment_correction: bool = _f(False, "bool")


@dataclass(frozen=True)
class CalibrationConfig:
    rate_constant: Optional[float] = _f(None, "float")
    rate_anchor_pump: float = _f(7e-3, "power")
    rate_anchor_coupling: float = _f(27e-3, "power")
    rate_anchor_value: float = _f(2000.0, "frequency")


@dataclass(frozen=True)
class ExperimentConfig:
    lasers: LaserConfig
    species: AtomicSpecies = field(default_factory=AtomicSpecies)
    cell: CellConfig = field(default_factory=CellConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    model: ModelConfig = field(default_factory=ModelConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    density_override: Optional[float] = None

    @property
    def density(self) -> float:
        if self.density_override is not None:
            return self.density_override
        return vapor_density(self.cell.temperature, self.species.isotopic_purity)

    def channel_efficiency(self, channel: str) -> float:
        """Fiber coupling x filter transmission x SPCM efficiency."""
        filt = self.filters.stokes if channel == "s" else self.filters.anti_stokes
        det = self.detectors
        return det.fiber_coupling * filt.transmission * det.quantum_efficiency

    def with_values(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with fields replaced by dotted path, e.g. ``lasers.pump_power=7e-3``."""
        cfg = self
        for path, value in dotted.items():
            cfg = _replace_path(cfg, path.replace("__", ".").split("."), value)
        validate(cfg)
        return cfg


_SECTIONS = {
    "species": AtomicSpecies,
    "cell": CellConfig,
    "lasers": LaserConfig,
    "filters": FilterConfig,
    "detectors": DetectorConfig,
    "noise": NoiseModel,
    "model": ModelConfig,
    "calibration": CalibrationConfig,
}


def _replace_path(obj, parts, value):
    head, *rest = parts
    if not dataclasses.is_dataclass(obj) or head not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown configuration field {'.'.join(parts)!r}")
    if rest:
        value = _replace_path(getattr(obj, head), rest, value)
    return dataclasses.replace(obj, **{head: value})


# ---------------------------------------------------------------------------
# units

_UNITS = {
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "µW": 1e-6, "nW": 1e-9},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9,
               "inch": 0.0254, "in": 0.0254},
    "temperature_difference": {"K": 1.0, "degC": 1.0, "C": 1.0},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "/s": 1.0, "1/s": 1.0},
    "angular_frequency": {"rad/s": 1.0, "krad/s": 1e3, "Mrad/s": 1e6, "Grad/s": 1e9,
                          "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6,
                          "GHz": TWO_PI * 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "mass": {"kg": 1.0, "u": AMU, "amu": AMU},
    "dipole": {"C m": 1.0, "C*m": 1.0, "Cm": 1.0, "ea0": sc.e * sc.physical_constants["Bohr radius"][0],
               "D": 3.33564e-30},
    "fraction": {"": 1.0, "%": 0.01},
    "decibel": {"dB": 1.0},
    "angle": {"rad": 1.0, "mrad": 1e-3, "deg": math.pi / 180},
    "density": {"m^-3": 1.0, "/m^3": 1.0, "cm^-3": 1e6, "/cm^3": 1e6},
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(value: Any, dim: str, name: str = "value") -> float:
    """Convert a bare number or a ``"<number> <unit>"`` string to SI."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a number or quantity string, got {value!r}")
    m = _NUMBER.match(value)
    if not m:
        raise ConfigError(f"{name}: cannot parse quantity {value!r}")
    number, unit = float(m.group(1)), m.group(2)
    if dim == "temperature":
        if unit in ("", "K"):
            return number
        if unit in ("degC", "C", "°C"):
            return number + 273.15
        raise ConfigError(f"{name}: unit {unit!r} is not a temperature unit")
    table = _UNITS.get(dim, {"": 1.0})
    if unit == "" and "" not in table:
        return number
    if unit not in table:
        raise ConfigError(f"{name}: unit {unit!r} not valid for {dim} (allowed: {', '.join(u for u in table if u)})")
    return number * table[unit]


def _coerce(f: dataclasses.Field, raw: Any, where: str) -> Any:
    dim = f.metadata.get("dim")
    name = f"{where}.{f.name}"
    if raw is None:
        return None
    if dim == "bool":
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected true/false, got {raw!r}")
        return raw
    if dim == "choice":
        if raw not in f.metadata["choices"]:
            raise ConfigError(f"{name}: must be one of {f.metadata['choices']}, got {raw!r}")
        return raw
    if dim == "count":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return raw
    return parse_quantity(raw, dim, name)


def _build(cls, doc: Any, where: str):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if cls is FilterConfig:
            if name in doc:
                kwargs[name] = _build(ChannelFilter, doc[name], f"{where}.{name}")
            continue
        if name in doc:
            kwargs[name] = _coerce(f, doc[name], where)
        elif f.metadata.get("required"):
            raise ConfigError(f"{where}.{name} is required")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_config(doc: Any) -> ExperimentConfig:
    """Build and validate a config from an already-parsed mapping."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration document must be a mapping")
    unknown = set(doc) - set(_SECTIONS) - {"density_override"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    sections = {name: _build(cls, doc.get(name), name) for name, cls in _SECTIONS.items()}
    density = doc.get("density_override")
    if density is not None:
        density = parse_quantity(density, "density", "density_override")
    cfg = ExperimentConfig(density_override=density, **sections)
    validate(cfg)
    return cfg


def load_config(text: str, *overlays: str) -> ExperimentConfig:
    """Parse a YAML configuration document, optionally merged with overlays.

    Overlays are applied in order; nested sections merge key by key.
    """
    docs = []
    for t in (text, *overlays):
        try:
            docs.append(yaml.safe_load(t) if t.strip() else {})
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed configuration document: {exc}") from None
    merged: dict = {}
    for d in docs:
        if d is None:
            continue
        if not isinstance(d, dict):
            raise ConfigError("configuration document must be a mapping")
        _deep_merge(merged, d)
    return build_config(merged)


def load_config_file(path, overlays=()) -> ExperimentConfig:
    from pathlib import Path

    return load_config(Path(path).read_text(), *(Path(p).read_text() for p in overlays))


def _deep_merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_merge(dst[k], v)
        else:
            dst[k] = v


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize to YAML with every value in SI; ``load_config`` inverts it exactly."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def fingerprint(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# validation

def _check(ok: bool, name: str, value, bound: str) -> None:
    if not ok:
        raise ConfigError(f"{name} = {value!r} violates bound {bound}")


def validate(cfg: ExperimentConfig) -> None:
    s = cfg.species
    _check(s.mass > 0, "AtomicSpecies.mass", s.mass, "> 0")
    for name in ("d1_wavelength", "d2_wavelength"):
        v = getattr(s, name)
        _check(700e-9 < v < 900e-9, f"AtomicSpecies.{name}", v, "in (700e-9, 900e-9) m")
    _check(0 < s.isotopic_purity <= 1, "AtomicSpecies.isotopic_purity", s.isotopic_purity, "in (0, 1]")
    for name in ("natural_linewidth", "dipole_moment_d1", "dipole_moment_d2", "coupling_dipole"):
        _check(getattr(s, name) > 0, f"AtomicSpecies.{name}", getattr(s, name), "> 0")

    c = cfg.cell
    _check(c.length > 0, "CellConfig.length", c.length, "> 0")
    _check(c.inner_diameter > 0, "CellConfig.inner_diameter", c.inner_diameter, "> 0")
    _check(c.temperature > 273, "CellConfig.temperature", c.temperature, "> 273 K")
    _check(c.temperature_uncertainty >= 0, "CellConfig.temperature_uncertainty", c.temperature_uncertainty, ">= 0")
    _check(c.ground_decoherence_rate >= 0, "CellConfig.ground_decoherence_rate", c.ground_decoherence_rate, ">= 0")

    las = cfg.lasers
    for name in ("pump_power", "coupling_power"):
        _check(getattr(las, name) >= 0, f"LaserConfig.{name}", getattr(las, name), ">= 0")
    for name in ("pump_diameter", "coupling_diameter", "mode_waist"):
        _check(getattr(las, name) > 0, f"LaserConfig.{name}", getattr(las, name), "> 0")

    for ch in ("stokes", "anti_stokes"):
        fl = getattr(cfg.filters, ch)
        _check(0 < fl.transmission <= 1, f"FilterConfig.transmission ({ch})", fl.transmission, "in (0, 1]")
        _check(fl.bandwidth > 0, f"FilterConfig.bandwidth ({ch})", fl.bandwidth, "> 0")
        _check(fl.extinction >= 0, f"FilterConfig.extinction ({ch})", fl.extinction, ">= 0 dB")
        _check(fl.free_spectral_range > fl.bandwidth, f"FilterConfig.free_spectral_range ({ch})",
               fl.free_spectral_range, "> bandwidth")

    d = cfg.detectors
    for name in ("quantum_efficiency", "fiber_coupling"):
        _check(0 < getattr(d, name) <= 1, f"DetectorConfig.{name}", getattr(d, name), "in (0, 1]")
    for name in ("dead_time", "timing_jitter_sigma", "dark_count_rate"):
        _check(getattr(d, name) >= 0, f"DetectorConfig.{name}", getattr(d, name), ">= 0")

    n = cfg.noise
    for name in ("raman_background_as", "leakage_s", "leakage_as", "coherence_time"):
        _check(getattr(n, name) >= 0, f"NoiseModel.{name}", getattr(n, name), ">= 0")
    _check(0 < n.optical_pumping_suppression <= 1, "NoiseModel.optical_pumping_suppression",
           n.optical_pumping_suppression, "in (0, 1]")
    _check(n.reference_pump_power > 0, "NoiseModel.reference_pump_power", n.reference_pump_power, "> 0")

    m = cfg.model
    _check(m.quadrature_order >= 2, "ModelConfig.quadrature_order", m.quadrature_order, ">= 2")
    _check(m.grid_points >= 64, "ModelConfig.grid_points", m.grid_points, ">= 64")
    if m.grid_span is not None:
        _check(m.grid_span > 0, "ModelConfig.grid_span", m.grid_span, "> 0")

    cal = cfg.calibration
    if cal.rate_constant is not None:
        _check(cal.rate_constant > 0, "CalibrationConfig.rate_constant", cal.rate_constant, "> 0")
    _check(cal.rate_anchor_pump > 0, "CalibrationConfig.rate_anchor_pump", cal.rate_anchor_pump, "> 0")
    _check(cal.rate_anchor_value > 0, "CalibrationConfig.rate_anchor_value", cal.rate_anchor_value, "> 0")

    if cfg.density_override is not None:
        _check(cfg.density_override >= 0, "ExperimentConfig.density_override", cfg.density_override, ">= 0")


# ---------------------------------------------------------------------------
# physics helpers

def vapor_density(temperature: float, purity: float = 1.0) -> float:
    """Rubidium number density (m^-3) of saturated vapor times isotopic purity.

    Uses Nesmeyanov's vapor-pressure correlation (solid below the 312.46 K
    melting point, liquid above), with pressure in torr.  The simpler
    Alcock form gives about 35% more at 63 C; the calibration fits an
    effective density, so the choice only sets the starting point.
    """
    if not 273.0 < temperature < 450.0:
        raise ConfigError(f"temperature {temperature} K outside validated range (273, 450) K")
    if not 0.0 <= purity <= 1.0:
        raise ConfigError(f"purity {purity} outside [0, 1]")
    t = temperature
    if t < 312.46:
        log_p = -94.04826 - 1961.258 / t - 0.03771687 * t + 42.57526 * math.log10(t)
    else:
        log_p = 15.88253 - 4529.635 / t + 0.00058663 * t - 2.99138 * math.log10(t)
    pressure = 10.0 ** log_p * 133.322368
    return purity * pressure / (K_B * t)


def peak_field(power: float, beam_diameter: float) -> float:
    """Peak electric field amplitude (V/m) of a Gaussian beam."""
    if power < 0 or beam_diameter <= 0:
        raise ConfigError("power must be >= 0 and beam_diameter > 0")
    w = beam_diameter / 2
    intensity = 2 * power / (math.pi * w * w)
    return math.sqrt(2 * intensity / (C_LIGHT * EPS0))


def power_to_rabi(power: float, beam_diameter: float, dipole: float) -> float:
    """Rabi frequency (rad/s) at the center of a Gaussian beam of given 1/e^2 diameter."""
    return dipole * peak_field(power, beam_diameter) / HBAR


def doppler_fwhm(temperature: float, wavelength: float, mass: float) -> float:
    """Doppler FWHM in Hz."""
    if temperature < 0:
        raise ConfigError("temperature must be >= 0")
    return math.sqrt(8 * math.log(2) * K_B * temperature / mass) / wavelength


def thermal_velocity(temperature: float, mass: float) -> float:
    """1D velocity standard deviation sqrt(kT/m)."""
    return math.sqrt(K_B * temperature / mass)
