"""Seeded Monte Carlo of the photon-counting chain.

Timestamps are held as integer picoseconds (int64) so that the binary file
round trip is exact.  Every random draw comes from a ``numpy`` generator
seeded by ``(seed, label)``, so each stream is a pure function of its inputs.

Channel layout of the simulated experiment: each arm ends on a 50/50 splitter
with two counters, giving Stokes A/B and anti-Stokes A/B.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .biphoton import BiphotonWaveform
from .config import ExperimentConfig
from .errors import FileFormatError, NumericalError

PS = 1e-12
PS_PER_S = 10 ** 12

STOKES_A, ANTI_STOKES_A, ANTI_STOKES_B, STOKES_B = 0, 1, 2, 3
CHANNEL_NAMES = {STOKES_A: "stokes_a", ANTI_STOKES_A: "anti_stokes_a",
                 ANTI_STOKES_B: "anti_stokes_b", STOKES_B: "stokes_b"}

BPHT_MAGIC = b"BPHT"
BPHT_VERSION = 1
_HEADER = struct.Struct("<4sH")
_RECORD = np.dtype([("channel", "u1"), ("ps", "<u8")])


def to_ps(seconds) -> np.ndarray:
    return np.rint(np.asarray(seconds, dtype=float) * PS_PER_S).astype(np.int64)


def rng_for(seed, label: str) -> np.random.Generator:
    """Independent generator for one named stream of one seeded run."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


@dataclass(frozen=True)
class ClickStream:
    channel: int
    timestamps_ps: np.ndarray
    duration: float
    seed_record: Tuple[str, ...] = ()

    def __post_init__(self):
        t = np.ascontiguousarray(self.timestamps_ps, dtype=np.int64)
        object.__setattr__(self, "timestamps_ps", t)
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("ClickStream timestamps must be sorted")
            if t[0] < 0 or t[-1] >= self.duration_ps:
                raise ValueError("ClickStream timestamps must lie in [0, duration)")

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration * PS_PER_S))

    @property
    def timestamps(self) -> np.ndarray:
        return self.timestamps_ps * PS

    @property
    def rate(self) -> float:
        return len(self) / self.duration if self.duration > 0 else 0.0

    def __len__(self) -> int:
        return int(self.timestamps_ps.size)

    def shifted(self, offset_ps: int, duration: Optional[float] = None) -> "ClickStream":
        dur = self.duration if duration is None else duration
        return ClickStream(self.channel, self.timestamps_ps + int(offset_ps), dur, self.seed_record)


@dataclass(frozen=True)
class PairEventList:
    t_s_ps: np.ndarray
    t_as_ps: np.ndarray
    rate: float
    duration: float
    waveform_fingerprint: str = ""
    seed_record: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return int(self.t_s_ps.size)

    @property
    def delays(self) -> np.ndarray:
        return (self.t_as_ps - self.t_s_ps) * PS


# ---------------------------------------------------------------------------
# generation


def delay_cdf(waveform: BiphotonWaveform) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative distribution of t_as - t_s on the waveform grid (trapezoid)."""
    p = waveform.intensity
    tau = waveform.tau_grid
    if not np.all(np.isfinite(p)):
        raise NumericalError("waveform is not normalizable: non-finite intensity")
    seg = 0.5 * (p[1:] + p[:-1]) * np.diff(tau)
    total = seg.sum()
    if not total > 0:
        raise NumericalError("waveform is not normalizable: zero total intensity")
    cdf = np.concatenate([[0.0], np.cumsum(seg) / total])
    return tau, cdf


def sample_delays(waveform: BiphotonWaveform, n: int, rng: np.random.Generator) -> np.ndarray:
    tau, cdf = delay_cdf(waveform)
    u = rng.random(n)
    # drop flat runs so that interp sees a strictly increasing abscissa
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], tau[keep])


def poisson_times(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0 or duration <= 0:
        return np.empty(0, dtype=np.int64)
    n = rng.poisson(rate * duration)
    return np.sort(to_ps(rng.uniform(0.0, duration, n)))


def chaotic_times(rate: float, duration: float, coherence_time: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Bunched arrivals with g2(tau) = 1 + exp(-|tau|/coherence_time).

    Shot-noise Cox process: cluster centres at rate 1/(2 tc), each emitting a
    Poisson number of photons with one-sided exponential delays of mean tc.
    Only clusters that emit at least one photon are drawn.
    """
    if coherence_time <= 0:
        return poisson_times(rate, duration, rng)
    if rate <= 0 or duration <= 0:
        return np.empty(0, dtype=np.int64)
    tc = coherence_time
    lam = 1.0 / (2 * tc)
    mu = rate / lam
    lead = 20 * tc
    span = duration + lead
    expected = lam * span
    # cluster sizes k >= 1 drawn per size class
    sizes = []
    k = 1
    pk = math.exp(-mu) * mu
    tail = 1.0 - math.exp(-mu)
    while tail > 1e-14 and k < 200:
        nk = rng.poisson(expected * pk)
        if nk:
            sizes.append(np.full(nk, k))
        tail -= pk
        k += 1
        pk *= mu / k
    if not sizes:
        return np.empty(0, dtype=np.int64)
    sizes = np.concatenate(sizes)
    centres = rng.uniform(-lead, duration, sizes.size)
    t = np.repeat(centres, sizes) + rng.exponential(tc, int(sizes.sum()))
    t = t[(t >= 0) & (t < duration)]
    return np.sort(to_ps(t))


def generate_pairs(rate: float, waveform: BiphotonWaveform, duration: float, seed) -> PairEventList:
    """Poisson Stokes times with anti-Stokes delays drawn from |psi|^2."""
    if rate < 0:
        raise ValueError("pair rate must be >= 0")
    rng = rng_for(seed, "pairs")
    delay_cdf(waveform)  # normalizability check even when no pairs are drawn
    t_s = poisson_times(rate, duration, rng)
    d = sample_delays(waveform, t_s.size, rng)
    t_as = t_s + to_ps(d)
    return PairEventList(t_s, t_as, rate, duration, waveform.config_fingerprint,
                         (f"seed={seed}", "pairs"))


# ---------------------------------------------------------------------------
# detector channel


def apply_dead_time(t: np.ndarray, dead_ps: int) -> np.ndarray:
    """Drop clicks within ``dead_ps`` of the previous accepted click."""
    if dead_ps <= 0 or t.size < 2:
        return t
    close = np.diff(t) < dead_ps
    if not close.any():
        return t
    keep = np.ones(t.size, dtype=bool)
    # clusters of consecutive close gaps are independent of each other
    idx = np.nonzero(close)[0]
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]]) + 1
    for a, b in zip(starts.tolist(), stops.tolist()):
        last = t[a]
        for j in range(a + 1, b + 1):
            if t[j] - last < dead_ps:
                keep[j] = False
            else:
                last = t[j]
    return t[keep]


def apply_channel(times, efficiency: float, jitter_sigma: float, dead_time: float, seed, *,
                  channel: int = 0, duration: Optional[float] = None, label: str = "") -> ClickStream:
    """Bernoulli thinning, Gaussian jitter and non-paralyzable dead time."""
    if isinstance(times, ClickStream):
        duration = times.duration if duration is None else duration
        lineage = times.seed_record
        t = times.timestamps_ps
    else:
        if duration is None:
            raise ValueError("duration is required for raw timestamp arrays")
        lineage = ()
        t = np.asarray(times, dtype=np.int64)
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must be in [0, 1]")
    label = label or f"channel{channel}"
    rng = rng_for(seed, label)
    if efficiency < 1:
        t = t[rng.random(t.size) < efficiency]
    if jitter_sigma > 0:
        t = t + to_ps(rng.normal(0.0, jitter_sigma, t.size))
    dur_ps = int(round(duration * PS_PER_S))
    t = np.sort(t[(t >= 0) & (t < dur_ps)], kind="stable")
    t = apply_dead_time(t, int(round(dead_time * PS_PER_S)))
    return ClickStream(channel, t, duration, lineage + (f"seed={seed}", label))


def merge(*streams: ClickStream, channel: Optional[int] = None) -> ClickStream:
    if not streams:
        raise ValueError("nothing to merge")
    dur = max(s.duration for s in streams)
    t = np.sort(np.concatenate([s.timestamps_ps for s in streams]), kind="stable")
    lineage = tuple(x for s in streams for x in s.seed_record)
    return ClickStream(streams[0].channel if channel is None else channel, t, dur, lineage)


def add_background(stream: ClickStream, rate: float, seed, *, coherence_time: float = 0.0,
                   dead_time: float = 0.0, label: str = "background") -> ClickStream:
    """Merge an independent Poisson (or chaotic) stream and re-apply dead time."""
    if rate <= 0:
        return stream
    rng = rng_for(seed, f"{label}/{stream.channel}")
    extra = chaotic_times(rate, stream.duration, coherence_time, rng)
    t = np.sort(np.concatenate([stream.timestamps_ps, extra]), kind="stable")
    t = apply_dead_time(t, int(round(dead_time * PS_PER_S)))
    return ClickStream(stream.channel, t, stream.duration,
                       stream.seed_record + (f"seed={seed}", label))


def split_stream(stream: ClickStream, ratio: float, seed, *, channels: Tuple[int, int] = None,
                 label: str = "split") -> Tuple[ClickStream, ClickStream]:
    """Route each click to the first output with probability ``ratio``."""
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must be in [0, 1]")
    rng = rng_for(seed, f"{label}/{stream.channel}")
    first = rng.random(len(stream)) < ratio
    ca, cb = channels if channels is not None else (stream.channel, stream.channel)
    rec = stream.seed_record + (f"seed={seed}", label)
    return (ClickStream(ca, stream.timestamps_ps[first], stream.duration, rec + ("a",)),
            ClickStream(cb, stream.timestamps_ps[~first], stream.duration, rec + ("b",)))


# ---------------------------------------------------------------------------
# the simulated experiment


def simulate_detection(cfg: ExperimentConfig, waveform: BiphotonWaveform, pair_rate: float,
                       duration: float, seed) -> Dict[int, ClickStream]:
    """Four-counter click streams for one operating point."""
    det = cfg.detectors
    pump = cfg.lasers.pump_power
    pairs = generate_pairs(pair_rate, waveform, duration, seed)
    out: Dict[int, ClickStream] = {}
    arms = (
        ("s", pairs.t_s_ps, cfg.noise.stokes_components(pump), (STOKES_A, STOKES_B)),
        ("as", pairs.t_as_ps, cfg.noise.anti_stokes_components(pump), (ANTI_STOKES_A, ANTI_STOKES_B)),
    )
    for name, photons, (chaotic, poissonian), chans in arms:
        dur_ps = int(round(duration * PS_PER_S))
        photons = np.sort(photons[(photons >= 0) & (photons < dur_ps)])
        signal = apply_channel(photons, cfg.channel_efficiency(name), 0.0, 0.0, seed,
                               channel=chans[0], duration=duration, label=f"{name}/thin")
        light = add_background(signal, chaotic, seed, coherence_time=cfg.noise.coherence_time,
                               label=f"{name}/chaotic")
        light = add_background(light, poissonian, seed, label=f"{name}/poisson")
        a, b = split_stream(light, 0.5, seed, channels=chans, label=f"{name}/bs")
        for arm in (a, b):
            arm = add_background(arm, det.dark_count_rate, seed, label="dark")
            out[arm.channel] = apply_channel(arm, 1.0, det.timing_jitter_sigma, det.dead_time, seed,
                                             channel=arm.channel, label=f"counter{arm.channel}")
    return dict(sorted(out.items()))


def expected_singles(cfg: ExperimentConfig, pair_rate: float) -> Tuple[float, float]:
    """Mean (Stokes, anti-Stokes) click rates summed over both counters of each arm."""
    pump = cfg.lasers.pump_power
    dark = 2 * cfg.detectors.dark_count_rate
    s = cfg.channel_efficiency("s") * pair_rate + cfg.noise.stokes_rate(pump) + dark
    a = cfg.channel_efficiency("as") * pair_rate + cfg.noise.anti_stokes_rate(pump) + dark
    return s, a


def peak_bin_probability(waveform: BiphotonWaveform, bin_width: float, jitter_sigma: float = 0.0,
                         origin: float = 0.0) -> float:
    """Largest probability of the delay falling in one bin [origin + k w, origin + (k+1) w)."""
    tau, cdf = delay_cdf(waveform)
    step = min(float(np.min(np.diff(tau))), bin_width / 20)
    pad = 6 * jitter_sigma + bin_width
    fine = np.arange(tau[0] - pad, tau[-1] + pad, step)
    c = np.interp(fine, tau, cdf, left=0.0, right=1.0)
    if jitter_sigma > 0:
        p = np.diff(c, prepend=0.0)
        half = int(math.ceil(6 * jitter_sigma / step))
        x = np.arange(-half, half + 1) * step
        kern = np.exp(-0.5 * (x / jitter_sigma) ** 2)
        p = np.convolve(p, kern / kern.sum(), mode="same")
        c = np.cumsum(p)
    k0 = math.floor((fine[0] - origin) / bin_width)
    k1 = math.ceil((fine[-1] - origin) / bin_width)
    edges = origin + np.arange(k0, k1 + 1) * bin_width
    ce = np.interp(edges, fine, c, left=0.0, right=float(c[-1]))
    return float(np.max(np.diff(ce)))


def peak_coincidence_rate(cfg: ExperimentConfig, waveform: BiphotonWaveform, pair_rate: float,
                          bin_width: float) -> float:
    """True-pair coincidences per second in the most populated bin."""
    eta = cfg.channel_efficiency("s") * cfg.channel_efficiency("as")
    jitter = math.sqrt(2) * cfg.detectors.timing_jitter_sigma
    return eta * pair_rate * peak_bin_probability(waveform, bin_width, jitter)


def predicted_g2_max(cfg: ExperimentConfig, waveform: BiphotonWaveform, pair_rate: float,
                     bin_width: float = 1e-9) -> float:
    """Rate-ratio model: 1 + peak-bin pair coincidences over the accidental floor."""
    s, a = expected_singles(cfg, pair_rate)
    floor = s * a * bin_width
    if floor <= 0:
        raise NumericalError("zero accidental floor in the rate-ratio model")
    return 1.0 + peak_coincidence_rate(cfg, waveform, pair_rate, bin_width) / floor


# ---------------------------------------------------------------------------
# timestamp files


def write_bpht(path_or_buf, streams: Iterable[ClickStream]) -> None:
    """Binary timestamp file: all records merged in time order."""
    streams = list(streams)
    rec = np.empty(sum(len(s) for s in streams), dtype=_RECORD)
    if rec.size:
        rec["channel"] = np.concatenate([np.full(len(s), s.channel, dtype=np.uint8) for s in streams])
        rec["ps"] = np.concatenate([s.timestamps_ps for s in streams]).astype(np.uint64)
        rec = rec[np.argsort(rec["ps"], kind="stable")]
    payload = _HEADER.pack(BPHT_MAGIC, BPHT_VERSION) + rec.tobytes()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(payload)
        return
    from ._io import atomic_write_bytes

    atomic_write_bytes(path_or_buf, payload)


def _streams_from_records(channels: np.ndarray, ps: np.ndarray, offsets: np.ndarray,
                          duration: Optional[float]) -> Dict[int, ClickStream]:
    if ps.size and int(ps.max()) > np.iinfo(np.int64).max:
        bad = int(np.argmax(ps > np.iinfo(np.int64).max))
        raise FileFormatError("timestamp exceeds the int64 range", int(offsets[bad]))
    ps = ps.astype(np.int64)
    if duration is None:
        duration = (int(ps.max()) + 1) * PS if ps.size else 0.0
    out = {}
    for ch in np.unique(channels).tolist():
        sel = np.nonzero(channels == ch)[0]
        t = ps[sel]
        back = np.nonzero(np.diff(t) < 0)[0]
        if back.size:
            raise FileFormatError(f"channel {ch} timestamps decrease", int(offsets[sel[back[0] + 1]]))
        if t.size and t[-1] >= round(duration * PS_PER_S):
            raise FileFormatError(f"channel {ch} timestamp beyond duration", int(offsets[sel[-1]]))
        out[int(ch)] = ClickStream(int(ch), t, duration, ("file",))
    return out


def read_bpht(path_or_bytes, duration: Optional[float] = None) -> Dict[int, ClickStream]:
    """Parse a BPHT file; duration defaults to the last timestamp plus 1 ps."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    if len(data) < 4 or data[:4] != BPHT_MAGIC:
        raise FileFormatError("bad magic, expected 'BPHT'", 0)
    if len(data) < _HEADER.size:
        raise FileFormatError("truncated header", len(data))
    _, version = _HEADER.unpack_from(data)
    if version != BPHT_VERSION:
        raise FileFormatError(f"unsupported version {version}", 4)
    body = len(data) - _HEADER.size
    whole, rest = divmod(body, _RECORD.itemsize)
    if rest:
        raise FileFormatError(f"truncated record ({rest} of {_RECORD.itemsize} bytes)",
                              _HEADER.size + whole * _RECORD.itemsize)
    rec = np.frombuffer(data, dtype=_RECORD, offset=_HEADER.size, count=whole)
    offsets = _HEADER.size + np.arange(whole) * _RECORD.itemsize
    return _streams_from_records(rec["channel"], rec["ps"], offsets, duration)


def read_timestamp_csv(path, duration: Optional[float] = None) -> Dict[int, ClickStream]:
    with open(path, "rb") as fh:
        return parse_timestamp_csv(fh.read(), duration)


def parse_timestamp_csv(raw: bytes, duration: Optional[float] = None) -> Dict[int, ClickStream]:
    """CSV with rows ``channel,picoseconds``; '#' comments and a header row allowed."""
    chans, ps, offs = [], [], []
    pos = 0
    for line in io.BytesIO(raw):
        text = line.decode("utf-8", errors="replace").strip()
        here = pos
        pos += len(line)
        if not text or text.startswith("#"):
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise FileFormatError(f"expected 'channel,picoseconds', got {text!r}", here)
        try:
            c, t = int(parts[0]), int(parts[1])
        except ValueError:
            if not chans and not parts[0].isdigit():
                continue  # header row
            raise FileFormatError(f"non-integer field in {text!r}", here) from None
        if not 0 <= c <= 255 or t < 0:
            raise FileFormatError(f"channel or timestamp out of range in {text!r}", here)
        chans.append(c)
        ps.append(t)
        offs.append(here)
    return _streams_from_records(np.array(chans, dtype=np.uint8), np.array(ps, dtype=np.uint64),
                                 np.array(offs, dtype=np.int64), duration)


def read_timestamps(path, duration: Optional[float] = None) -> Dict[int, ClickStream]:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BPHT_MAGIC:
        return read_bpht(path, duration)
    if str(path).lower().endswith(".csv"):
        return read_timestamp_csv(path, duration)
    return read_bpht(path, duration)
