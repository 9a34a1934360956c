"""Estimators computed from click streams.

All delays are t_as - t_s in integer picoseconds.  Bin k of a histogram with
window (lo, hi) covers [lo + k w, lo + (k+1) w).  Uncertainties are Poisson
counting errors with first-order propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .biphoton import fit_decay
from .config import ExperimentConfig
from .detection import PS, PS_PER_S, ClickStream
from .errors import NumericalError, StatisticsError

Value = Union[float, Tuple[float, float]]

FLOOR_DECAY_MULTIPLE = 5.0
_CHUNK = 1 << 20


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width: float
    window: Tuple[float, float]
    counts: np.ndarray
    total_singles: Tuple[int, int]
    duration: float

    @property
    def edges(self) -> np.ndarray:
        return self.window[0] + np.arange(self.counts.size + 1) * self.bin_width

    @property
    def tau(self) -> np.ndarray:
        """Left bin edges, in seconds."""
        return self.edges[:-1]

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if (self.bin_width, self.window) != (other.bin_width, other.window):
            raise ValueError("histograms with different binning cannot be merged")
        return CoincidenceHistogram(
            self.bin_width, self.window, self.counts + other.counts,
            (self.total_singles[0] + other.total_singles[0], self.total_singles[1] + other.total_singles[1]),
            self.duration + other.duration)


@dataclass(frozen=True)
class G2Result:
    tau: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    normalization_mode: str
    floor: float
    floor_stderr: float
    g2_max: float
    g2_max_stderr: float
    peak_tau: float
    decay_constant: float

    def to_dict(self) -> dict:
        return {"normalization_mode": self.normalization_mode, "floor": self.floor,
                "floor_stderr": self.floor_stderr, "g2_max": self.g2_max,
                "g2_max_stderr": self.g2_max_stderr, "peak_tau": self.peak_tau,
                "decay_constant": self.decay_constant}


@dataclass(frozen=True)
class CSCheck:
    g2m: Tuple[float, float]
    g_ss0: Tuple[float, float]
    g_asas0: Tuple[float, float]
    violation_factor: float
    violation_stderr: float

    @property
    def verdict(self) -> str:
        return "violated" if self.violation_factor - self.violation_stderr > 1 else "not_violated"

    def to_dict(self) -> dict:
        return {"g2m": list(self.g2m), "g_ss0": list(self.g_ss0), "g_asas0": list(self.g_asas0),
                "violation_factor": self.violation_factor,
                "violation_stderr": self.violation_stderr, "verdict": self.verdict}


@dataclass(frozen=True)
class ConditionalG2Result:
    window_widths: np.ndarray
    g2c: np.ndarray
    stderr: np.ndarray
    n1: int
    n12: np.ndarray
    n13: np.ndarray
    n123: np.ndarray

    def to_dict(self) -> dict:
        return {"window_widths": self.window_widths.tolist(), "g2c": self.g2c.tolist(),
                "stderr": self.stderr.tolist(), "n1": self.n1, "n12": self.n12.tolist(),
                "n13": self.n13.tolist(), "n123": self.n123.tolist()}


# ---------------------------------------------------------------------------
# histogram


def _as_ps(stream) -> np.ndarray:
    t = stream.timestamps_ps if isinstance(stream, ClickStream) else np.asarray(stream, dtype=np.int64)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("input stream is not sorted")
    return t


def _binning(bin_width: float, window: Tuple[float, float]):
    w = int(round(bin_width * PS_PER_S))
    lo = int(round(window[0] * PS_PER_S))
    hi = int(round(window[1] * PS_PER_S))
    if w <= 0:
        raise ValueError("bin width must be positive")
    if hi <= lo:
        raise ValueError("empty correlation window")
    n = (hi - lo) // w
    if n < 1:
        raise ValueError("window shorter than one bin")
    return w, lo, n


def delay_counts(t_a: np.ndarray, t_b: np.ndarray, w: int, lo: int, n: int) -> np.ndarray:
    """Histogram of t_b - t_a over [lo, lo + n w) in ps; every ordered pair counts."""
    counts = np.zeros(n, dtype=np.int64)
    hi = lo + n * w
    for start in range(0, t_a.size, _CHUNK):
        ta = t_a[start:start + _CHUNK]
        first = np.searchsorted(t_b, ta + lo, side="left")
        last = np.searchsorted(t_b, ta + hi, side="left")
        k = last - first
        total = int(k.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(ta.size), k)
        offs = np.arange(total) - np.repeat(np.cumsum(k) - k, k)
        d = t_b[first[owner] + offs] - ta[owner]
        counts += np.bincount((d - lo) // w, minlength=n)[:n]
    return counts


def coincidence_histogram(s, a, bin_width: float = 1e-9,
                          window: Tuple[float, float] = (-500e-9, 1000e-9),
                          duration: Optional[float] = None) -> CoincidenceHistogram:
    """Counts of (t_as - t_s) over ``window`` for all ordered click pairs."""
    t_s, t_as = _as_ps(s), _as_ps(a)
    w, lo, n = _binning(bin_width, window)
    if duration is None:
        durations = [x.duration for x in (s, a) if isinstance(x, ClickStream)]
        if not durations:
            raise ValueError("duration is required for raw timestamp arrays")
        duration = max(durations)
    counts = delay_counts(t_s, t_as, w, lo, n)
    return CoincidenceHistogram(w * PS, (lo * PS, (lo + n * w) * PS), counts,
                                (int(t_s.size), int(t_as.size)), float(duration))


def brute_force_histogram(t_s: Sequence[int], t_as: Sequence[int], w: int, lo: int, n: int) -> np.ndarray:
    """All-pairs O(N^2) reference for ``delay_counts``: every difference is formed explicitly."""
    t_s = np.asarray(t_s, dtype=np.int64)
    t_as = np.asarray(t_as, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i in range(0, t_s.size, 256):
        d = (t_as[None, :] - t_s[i:i + 256, None]).ravel()
        d = d[(d >= lo) & (d < lo + n * w)]
        counts += np.bincount((d - lo) // w, minlength=n)
    return counts


# ---------------------------------------------------------------------------
# normalization


def analytic_floor(hist: CoincidenceHistogram) -> float:
    if hist.duration <= 0:
        raise StatisticsError("zero floor: no acquisition time")
    return hist.total_singles[0] * hist.total_singles[1] * hist.bin_width / hist.duration


def estimate_decay_constant(hist: CoincidenceHistogram) -> float:
    """Area over peak height of the floor-subtracted histogram, clamped to the window."""
    c = hist.counts.astype(float)
    base = float(np.median(c))
    excess = c - base
    peak = excess.max()
    tau = excess.sum() / peak * hist.bin_width if peak > 0 else hist.bin_width
    span = hist.window[1] - hist.window[0]
    return float(np.clip(tau, hist.bin_width, span / 20))


def floor_mask(hist: CoincidenceHistogram, decay_constant: float) -> np.ndarray:
    centre = hist.tau + hist.bin_width / 2
    ipk = int(np.argmax(hist.counts))
    reach = FLOOR_DECAY_MULTIPLE * decay_constant
    return np.abs(centre - centre[ipk]) > reach


def measured_floor(hist: CoincidenceHistogram, decay_constant: Optional[float] = None):
    """Mean counts per bin beyond 5 decay constants of the peak, with stderr."""
    if decay_constant is None:
        decay_constant = estimate_decay_constant(hist)
    mask = floor_mask(hist, decay_constant)
    if mask.sum() < 10:
        raise StatisticsError(f"zero floor: only {int(mask.sum())} bins beyond the signal")
    n = hist.counts[mask]
    floor = float(n.mean())
    if floor <= 0:
        raise StatisticsError("zero floor: empty tail bins")
    return floor, math.sqrt(n.sum()) / n.size, decay_constant


def normalize_g2(hist: CoincidenceHistogram, mode: str = "measured_floor",
                 decay_constant: Optional[float] = None, smooth_peak: bool = False) -> G2Result:
    if mode == "measured_floor":
        floor, floor_err, decay_constant = measured_floor(hist, decay_constant)
    elif mode == "analytic_floor":
        floor, floor_err = analytic_floor(hist), 0.0
        if floor <= 0:
            raise StatisticsError("zero floor: no singles")
        if decay_constant is None:
            decay_constant = estimate_decay_constant(hist)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    c = hist.counts.astype(float)
    g2 = c / floor
    stderr = np.sqrt(c) / floor
    if smooth_peak:
        sm = np.convolve(c, np.ones(3) / 3, mode="same")
        i = int(np.argmax(sm))
        peak_counts, peak_var = sm[i], sm[i] / 3
    else:
        i = int(np.argmax(c))
        peak_counts, peak_var = c[i], c[i]
    g_max = peak_counts / floor
    g_err = math.sqrt(peak_var / floor ** 2 + (peak_counts * floor_err / floor ** 2) ** 2)
    return G2Result(hist.tau, g2, stderr, mode, floor, floor_err, float(g_max), float(g_err),
                    float(hist.tau[i]), float(decay_constant))


def detected_pair_rate(hist: CoincidenceHistogram, g2: G2Result) -> Tuple[float, float]:
    """Excess coincidences per second over the non-floor bins, with stderr."""
    if hist.duration <= 0:
        raise StatisticsError("no acquisition time")
    mask = ~floor_mask(hist, g2.decay_constant)
    c = hist.counts[mask].astype(float)
    excess = c.sum() - g2.floor * c.size
    var = c.sum() + (c.size * g2.floor_stderr) ** 2
    return excess / hist.duration, math.sqrt(var) / hist.duration


def back_out_generation_rate(detected_pair_rate: float, config: ExperimentConfig) -> float:
    """Generated pairs/s from detected pairs/s and the per-arm efficiency chains."""
    eta = config.channel_efficiency("s") * config.channel_efficiency("as")
    if eta <= 0:
        raise StatisticsError("zero detection efficiency")
    return detected_pair_rate / eta


def fit_histogram_decay(hist: CoincidenceHistogram, g2: Optional[G2Result] = None) -> Tuple[float, float]:
    """Poisson fit of the decay with the measured floor held fixed."""
    if g2 is None:
        g2 = normalize_g2(hist, "measured_floor")
    centre = hist.tau + hist.bin_width / 2
    try:
        tau_b, err = fit_decay(centre, hist.counts.astype(float), background=g2.floor, counts=True)
    except NumericalError as exc:
        raise StatisticsError(f"decay fit failed: {exc}") from None
    if not (tau_b > 0 and math.isfinite(err)):
        raise StatisticsError(f"decay fit failed: tau_b = {tau_b:.3g}")
    return tau_b, err


# ---------------------------------------------------------------------------
# autocorrelation and nonclassicality


def auto_g2_zero(arm_a, arm_b, bin_width: float = 1e-9, duration: Optional[float] = None) -> Tuple[float, float]:
    """Two-counter g2(0): coincidences with |t_b - t_a| < w/2 over the analytic floor."""
    t_a, t_b = _as_ps(arm_a), _as_ps(arm_b)
    if duration is None:
        duration = max(x.duration for x in (arm_a, arm_b) if isinstance(x, ClickStream))
    w = int(round(bin_width * PS_PER_S))
    lo = -(w // 2)
    c = int(delay_counts(t_a, t_b, w, lo, 1)[0])
    floor = t_a.size * t_b.size * (w * PS) / duration if duration > 0 else 0.0
    if floor <= 0 or c == 0:
        raise StatisticsError("insufficient statistics for g2(0)")
    value, err = c / floor, math.sqrt(c) / floor
    if err > value:
        raise StatisticsError("insufficient statistics for g2(0)")
    return value, err


def _vu(x: Value) -> Tuple[float, float]:
    if isinstance(x, (tuple, list)):
        return float(x[0]), float(x[1])
    return float(x), 0.0


def cs_violation(g2m: Value, g_ss0: Value, g_asas0: Value) -> CSCheck:
    """Cauchy-Schwarz factor g2m^2 / (g_ss0 g_asas0) with propagated stderr."""
    (m, um), (s, us), (a, ua) = _vu(g2m), _vu(g_ss0), _vu(g_asas0)
    if min(m, s, a) <= 0:
        raise ValueError("Cauchy-Schwarz inputs must be positive")
    factor = m * m / (s * a)
    err = factor * math.sqrt((2 * um / m) ** 2 + (us / s) ** 2 + (ua / a) ** 2)
    return CSCheck((m, um), (s, us), (a, ua), factor, err)


def _next_wait(t: np.ndarray, start: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(t, start, side="left")
    wait = np.full(start.shape, np.iinfo(np.int64).max, dtype=np.int64)
    ok = idx < t.size
    wait[ok] = t[idx[ok]] - start[ok]
    return wait


def conditional_g2(trigger, arm_a, arm_b, window_widths: Sequence[float],
                   offset: float = 0.0) -> ConditionalG2Result:
    """Heralded g2c = N1 N123 / (N12 N13) for windows [t + offset, t + offset + w)."""
    t1, ta, tb = _as_ps(trigger), _as_ps(arm_a), _as_ps(arm_b)
    widths = np.asarray(window_widths, dtype=float)
    start = t1 + int(round(offset * PS_PER_S))
    # wait from each window start to the next click in each arm; an arm fires
    # inside [start, start + w) exactly when that wait is below w
    wait_a = _next_wait(ta, start)
    wait_b = _next_wait(tb, start)
    n12, n13, n123 = [], [], []
    for wdt in widths:
        w_ps = int(round(wdt * PS_PER_S))
        ha = wait_a < w_ps
        hb = wait_b < w_ps
        n12.append(int(ha.sum()))
        n13.append(int(hb.sum()))
        n123.append(int((ha & hb).sum()))
    n1 = int(t1.size)
    n12, n13, n123 = (np.array(x, dtype=np.int64) for x in (n12, n13, n123))
    if np.any(n12 == 0) or np.any(n13 == 0):
        raise StatisticsError("conditional g2: an arm saw no heralded clicks")
    g = n1 * n123 / (n12 * n13)
    # with N123 = 0 the error of a single count is reported
    rel = np.sqrt(1 / n1 + 1 / np.maximum(n123, 1) + 1 / n12 + 1 / n13)
    err = np.where(n123 > 0, g * rel, n1 / (n12 * n13))
    return ConditionalG2Result(widths, g.astype(float), err.astype(float), n1, n12, n13, n123)


# ---------------------------------------------------------------------------
# output


def write_histogram_csv(path, hist: CoincidenceHistogram, g2: Optional[G2Result] = None,
                        config_fingerprint: str = "") -> None:
    from ._io import atomic_write_text

    lines = [f"# config={config_fingerprint} bin_width_ns={hist.bin_width * 1e9:.6g}"
             f" duration_s={hist.duration:.12g} singles={hist.total_singles[0]},{hist.total_singles[1]}"]
    if g2 is None:
        lines.append("tau_ns,counts")
        lines += [f"{t * 1e9:.6f},{c}" for t, c in zip(hist.tau, hist.counts)]
    else:
        lines.append("tau_ns,counts,g2,g2_stderr")
        lines += [f"{t * 1e9:.6f},{c},{g:.12g},{e:.12g}"
                  for t, c, g, e in zip(hist.tau, hist.counts, g2.g2, g2.stderr)]
    atomic_write_text(path, "\n".join(lines) + "\n")
