"""End-to-end workflows shared by the command line and the tests."""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import biphoton, detection
from . import correlation as corr
from ._io import atomic_write_json, atomic_write_text
from .config import ExperimentConfig, build_config, fingerprint, parse_quantity
from .detection import ANTI_STOKES_A, ANTI_STOKES_B, PS, STOKES_A, STOKES_B, ClickStream
from .errors import ConfigError, FileFormatError, StatisticsError

WORKERS_ENV = "VAPORPAIRS_WORKERS"
DEFAULT_WINDOW = (-500e-9, 1000e-9)
DEFAULT_G2C_WIDTHS = tuple(x * 1e-9 for x in (5, 10, 20, 50, 100, 200, 500, 1000, 2000))
KNOWN_CHANNELS = (STOKES_A, ANTI_STOKES_A, ANTI_STOKES_B, STOKES_B)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


# ---------------------------------------------------------------------------
# waveform


def run_waveform(cfg: ExperimentConfig, output_dir, plots: bool = False) -> dict:
    """jsa.csv, waveform.csv and metrics.json for one operating point."""
    out = Path(output_dir)
    jsa, wf, m = biphoton.simulate(cfg)
    metrics = m.to_dict()
    metrics["g2_max_model"] = detection.predicted_g2_max(cfg, wf, m.pair_rate)
    biphoton.write_jsa_csv(out / "jsa.csv", jsa)
    biphoton.write_waveform_csv(out / "waveform.csv", wf)
    atomic_write_json(out / "metrics.json", _jsonable(metrics))
    if plots:
        from . import plotting

        plotting.plot_waveform(out / "waveform.png", wf, m)
        plotting.plot_jsa(out / "jsa.png", jsa)
    return metrics


# ---------------------------------------------------------------------------
# analysis


@dataclass
class AnalysisResult:
    histogram: corr.CoincidenceHistogram
    g2: corr.G2Result
    summary: dict
    cs: dict
    g2c: Optional[corr.ConditionalG2Result]
    truth: Optional[dict] = None


def _observed_duration(streams: Dict[int, ClickStream]) -> float:
    last = [int(s.timestamps_ps[-1]) for s in streams.values() if len(s)]
    return (max(last) + 1) * PS if last else 0.0


def analyze_streams(streams: Dict[int, ClickStream], cfg: ExperimentConfig, *,
                    bin_width: float = 1e-9, window: Tuple[float, float] = DEFAULT_WINDOW,
                    g2c_widths: Sequence[float] = DEFAULT_G2C_WIDTHS) -> AnalysisResult:
    """Histogram, g2, Cauchy-Schwarz and heralded g2c from counter streams.

    The acquisition time is taken from the data (last click plus 1 ps) so that
    in-memory streams and their file round trip give identical numbers.
    """
    unknown = sorted(set(streams) - set(KNOWN_CHANNELS))
    if unknown:
        raise FileFormatError(f"unknown channel(s) {unknown}; expected a subset of {list(KNOWN_CHANNELS)}")
    s_arms = [streams[c] for c in (STOKES_A, STOKES_B) if c in streams]
    a_arms = [streams[c] for c in (ANTI_STOKES_A, ANTI_STOKES_B) if c in streams]
    if not s_arms or not a_arms:
        raise FileFormatError("need at least one Stokes and one anti-Stokes channel")
    duration = _observed_duration(streams)
    if duration <= 0:
        raise StatisticsError("insufficient statistics: no clicks recorded")
    streams = {c: ClickStream(c, s.timestamps_ps, duration, s.seed_record) for c, s in streams.items()}
    s = detection.merge(*[streams[x.channel] for x in s_arms], channel=STOKES_A)
    a = detection.merge(*[streams[x.channel] for x in a_arms], channel=ANTI_STOKES_A)

    hist = corr.coincidence_histogram(s, a, bin_width, window)
    g2 = corr.normalize_g2(hist, "measured_floor")
    rate, rate_err = corr.detected_pair_rate(hist, g2)
    eta = cfg.channel_efficiency("s") * cfg.channel_efficiency("as")
    summary = {
        "config_fingerprint": fingerprint(cfg),
        "duration_s": duration,
        "bin_width_s": hist.bin_width,
        "window_s": list(hist.window),
        "singles_rate_s": len(s) / duration,
        "singles_rate_as": len(a) / duration,
        **g2.to_dict(),
        "analytic_floor": corr.analytic_floor(hist),
        "detected_pair_rate": rate,
        "detected_pair_rate_stderr": rate_err,
        "back_out_generation_rate": corr.back_out_generation_rate(rate, cfg),
        "back_out_generation_rate_stderr": rate_err / eta,
    }
    try:
        tau_b, tau_err = corr.fit_histogram_decay(hist, g2)
        summary.update(tau_b=tau_b, tau_b_stderr=tau_err, bandwidth=1 / (2 * math.pi * tau_b))
    except StatisticsError as exc:
        summary.update(tau_b=None, tau_b_stderr=None, bandwidth=None, tau_b_error=str(exc))

    cs = {"available": False}
    autos = {}
    for name, pair in (("g_ss0", (STOKES_A, STOKES_B)), ("g_asas0", (ANTI_STOKES_A, ANTI_STOKES_B))):
        if all(c in streams for c in pair):
            try:
                autos[name] = corr.auto_g2_zero(streams[pair[0]], streams[pair[1]], bin_width)
            except StatisticsError as exc:
                cs[f"{name}_error"] = str(exc)
    if len(autos) == 2:
        check = corr.cs_violation((g2.g2_max, g2.g2_max_stderr), autos["g_ss0"], autos["g_asas0"])
        cs = {"available": True, **check.to_dict()}
    else:
        cs.update({k: list(v) for k, v in autos.items()})

    g2c = None
    if ANTI_STOKES_A in streams and ANTI_STOKES_B in streams:
        g2c = corr.conditional_g2(s, streams[ANTI_STOKES_A], streams[ANTI_STOKES_B], g2c_widths)
    return AnalysisResult(hist, g2, summary, cs, g2c)


def write_analysis(output_dir, result: AnalysisResult, plots: bool = False) -> None:
    out = Path(output_dir)
    fp = result.summary["config_fingerprint"]
    corr.write_histogram_csv(out / "histogram.csv", result.histogram, result.g2, fp)
    atomic_write_json(out / "g2.json", _jsonable(result.summary))
    atomic_write_json(out / "cs.json", _jsonable({"config_fingerprint": fp, **result.cs}))
    if result.g2c is not None:
        atomic_write_json(out / "g2c.json", _jsonable({"config_fingerprint": fp, **result.g2c.to_dict()}))
    if plots:
        from . import plotting

        plotting.plot_histogram(out / "histogram.png", result.histogram, result.g2)
        if result.g2c is not None:
            plotting.plot_g2c(out / "g2c.png", result.g2c)


def end_to_end(cfg: ExperimentConfig, duration: float, seed: int, output_dir=None, *,
               bin_width: float = 1e-9, window: Tuple[float, float] = DEFAULT_WINDOW,
               plots: bool = False):
    """Simulate, detect and analyze; returns (streams, AnalysisResult)."""
    if duration < 0:
        raise ConfigError("duration must be >= 0")
    jsa, wf, m = biphoton.simulate(cfg)
    streams = detection.simulate_detection(cfg, wf, m.pair_rate, duration, seed)
    if output_dir is not None:
        detection.write_bpht(Path(output_dir) / "streams.bpht", streams.values())
    result = analyze_streams(streams, cfg, bin_width=bin_width, window=window)
    # simulation truth lives beside, not inside, the file-reproducible analysis
    result.truth = {
        "config_fingerprint": fingerprint(cfg),
        "seed": int(seed),
        "duration_s": duration,
        "configured_generation_rate": m.pair_rate,
        "g2_max_model": detection.predicted_g2_max(cfg, wf, m.pair_rate, bin_width),
        "tau_b": m.tau_b,
        "one_over_e_time": m.one_over_e_time,
    }
    if output_dir is not None:
        write_analysis(output_dir, result, plots)
        atomic_write_json(Path(output_dir) / "simulation.json", _jsonable(result.truth))
    return streams, result


def analyze_file(path, cfg: ExperimentConfig, output_dir=None, *, bin_width: float = 1e-9,
                 window: Tuple[float, float] = DEFAULT_WINDOW, plots: bool = False) -> AnalysisResult:
    streams = detection.read_timestamps(path)
    result = analyze_streams(streams, cfg, bin_width=bin_width, window=window)
    if output_dir is not None:
        write_analysis(output_dir, result, plots)
    return result


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMETERS = {"coupling_power": "lasers.coupling_power", "pump_power": "lasers.pump_power"}
SWEEP_OUTPUTS = ("tau_b", "fit_stderr", "one_over_e_time", "bandwidth", "peak_time", "pair_rate",
                 "spectral_fwhm", "time_bandwidth_product", "g2_max_model", "g2_max", "g2_max_stderr")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: Tuple[float, ...]
    base: dict
    outputs: Tuple[str, ...]
    seed: int = 0
    endtoend_duration: float = 0.0

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter {self.parameter!r} not in {sorted(SWEEP_PARAMETERS)}")
        if len(self.values) < 2:
            raise ConfigError("a sweep needs at least 2 values")
        if any(not v > 0 for v in self.values):
            raise ConfigError("sweep values must be positive")
        bad = [o for o in self.outputs if o not in SWEEP_OUTPUTS]
        if bad:
            raise ConfigError(f"unknown sweep outputs {bad}; choose from {list(SWEEP_OUTPUTS)}")


def load_sweep_spec(path) -> SweepSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed sweep spec: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("sweep spec must be a mapping")
    unknown = set(doc) - {"config", "overlays", "parameter", "values", "overrides", "outputs",
                          "seed", "endtoend_duration"}
    if unknown:
        raise ConfigError(f"unknown sweep spec keys {sorted(unknown)}")
    for key in ("parameter", "values"):
        if key not in doc:
            raise ConfigError(f"sweep spec is missing {key!r}")
    base: dict = {}
    texts = []
    if doc.get("config"):
        texts.append((path.parent / doc["config"]).read_text())
    for ov in doc.get("overlays") or []:
        texts.append((path.parent / ov).read_text())
    from .config import _deep_merge

    for t in texts:
        d = yaml.safe_load(t) or {}
        _deep_merge(base, d)
    _deep_merge(base, doc.get("overrides") or {})
    values = tuple(parse_quantity(v, "power", "values") for v in doc["values"])
    outputs = tuple(doc.get("outputs") or ("tau_b", "one_over_e_time", "bandwidth", "pair_rate",
                                           "g2_max_model"))
    duration = parse_quantity(doc.get("endtoend_duration", 0), "time", "endtoend_duration")
    return SweepSpec(doc["parameter"], values, base, outputs, int(doc.get("seed", 0)), duration)


def _point_seed(seed: int, value: float) -> int:
    # depends on the value, not its position, so permuted specs permute rows only
    return zlib.crc32(f"{seed}:{value!r}".encode())


def sweep_point(base: dict, parameter: str, value: float, outputs: Sequence[str], seed: int,
                duration: float) -> dict:
    cfg = build_config(base).with_values(**{SWEEP_PARAMETERS[parameter]: value})
    jsa, wf, m = biphoton.simulate(cfg)
    row = {parameter: value, **m.to_dict()}
    row["g2_max_model"] = detection.predicted_g2_max(cfg, wf, m.pair_rate)
    if ("g2_max" in outputs or "g2_max_stderr" in outputs) and duration > 0:
        _, res = end_to_end(cfg, duration, _point_seed(seed, value))
        row["g2_max"] = res.g2.g2_max
        row["g2_max_stderr"] = res.g2.g2_max_stderr
    return {k: row.get(k) for k in (parameter, *outputs)}


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    return max(1, n)


def run_sweep(spec: SweepSpec, output_dir=None, workers: Optional[int] = None,
              plots: bool = False) -> List[dict]:
    build_config(spec.base)  # validate once up front
    workers = worker_count() if workers is None else workers
    args = [(spec.base, spec.parameter, v, spec.outputs, spec.seed, spec.endtoend_duration)
            for v in spec.values]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            rows = list(pool.map(sweep_point, *zip(*args)))
    else:
        rows = [sweep_point(*a) for a in args]
    if output_dir is not None:
        write_sweep_csv(Path(output_dir) / "sweep.csv", rows, spec, fingerprint(build_config(spec.base)))
        if plots:
            from . import plotting

            plotting.plot_sweep(Path(output_dir) / "sweep.png", rows, spec.parameter)
    return rows


def write_sweep_csv(path, rows: List[dict], spec: SweepSpec, config_fingerprint: str) -> None:
    cols = [spec.parameter, *spec.outputs]
    lines = [f"# config={config_fingerprint} parameter={spec.parameter} seed={spec.seed}",
             ",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r.get(c) is None else f"{r[c]:.12g}" for c in cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
