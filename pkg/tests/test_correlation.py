import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaporpairs import correlation as corr
from vaporpairs import detection
from vaporpairs.detection import ClickStream
from vaporpairs.errors import StatisticsError


def stream(ch, t, duration):
    return ClickStream(ch, np.sort(np.asarray(t, dtype=np.int64)), duration)


def poisson_pair(rate, duration, seed):
    rng = np.random.default_rng(seed)
    return (stream(0, detection.poisson_times(rate, duration, rng), duration),
            stream(1, detection.poisson_times(rate, duration, rng), duration))


def test_identical_clicks_land_in_zero_bin():
    s = stream(0, [1_000_000], 1e-3)
    h = corr.coincidence_histogram(s, s.shifted(0), 1e-9, (-10e-9, 10e-9))
    assert h.counts.sum() == 1
    assert h.tau[np.argmax(h.counts)] == pytest.approx(0.0)


def test_window_edges_are_half_open():
    s = stream(0, [0], 1e-6)
    a = stream(1, [5000, 10_000], 1e-6)
    h = corr.coincidence_histogram(s, a, 5e-9, (0, 10e-9))
    assert h.counts.tolist() == [0, 1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 50_000), max_size=60), st.lists(st.integers(0, 50_000), max_size=60),
       st.integers(1, 3000), st.integers(-20_000, 5000), st.integers(1, 40))
def test_histogram_matches_brute_force(ts, tas, w, lo, n):
    ts, tas = np.sort(np.array(ts, np.int64)), np.sort(np.array(tas, np.int64))
    assert np.array_equal(corr.delay_counts(ts, tas, w, lo, n), corr.brute_force_histogram(ts, tas, w, lo, n))


def test_unsorted_input_rejected():
    with pytest.raises(ValueError, match="sorted"):
        corr.coincidence_histogram(np.array([5, 1]), np.array([1, 2]), duration=1.0)


def test_poisson_floor_is_flat():
    s, a = poisson_pair(2e4, 100.0, 3)
    h = corr.coincidence_histogram(s, a, 10e-9, (-5e-6, 5e-6))
    expected = len(s) * len(a) * 10e-9 / 100.0
    assert corr.analytic_floor(h) == pytest.approx(expected)
    assert h.counts.mean() == pytest.approx(expected, rel=0.01)
    g = corr.normalize_g2(h, "measured_floor")
    assert abs(g.floor - expected) < 4 * g.floor_stderr


def test_floor_stderr_halves_with_double_duration():
    errs = []
    for duration in (100.0, 200.0):
        s, a = poisson_pair(2e4, duration, 8)
        h = corr.coincidence_histogram(s, a, 10e-9, (-5e-6, 5e-6))
        errs.append(corr.normalize_g2(h, "measured_floor", decay_constant=50e-9).floor_stderr / corr.analytic_floor(h))
    # relative variance of the floor falls as 1/T
    assert (errs[1] / errs[0]) ** 2 == pytest.approx(0.5, rel=0.05)


def test_time_shift_invariance():
    s, a = poisson_pair(5e3, 20.0, 2)
    a = stream(1, np.sort(np.concatenate([a.timestamps_ps, s.timestamps_ps[::3] + 40_000])), 20.0)
    h1 = corr.coincidence_histogram(s, a, 1e-9, (-200e-9, 400e-9))
    off = 7_000_000_123
    h2 = corr.coincidence_histogram(s.shifted(off, 30.0), a.shifted(off, 30.0), 1e-9, (-200e-9, 400e-9),
                                    duration=20.0)
    assert np.array_equal(h1.counts, h2.counts)


def test_unknown_mode_and_bad_binning():
    s, a = poisson_pair(1e3, 1.0, 0)
    h = corr.coincidence_histogram(s, a)
    with pytest.raises(ValueError, match="mode"):
        corr.normalize_g2(h, "nope")
    with pytest.raises(ValueError):
        corr.coincidence_histogram(s, a, 0.0)
    with pytest.raises(ValueError, match="window"):
        corr.coincidence_histogram(s, a, 1e-9, (1e-6, 0))


def test_empty_streams_have_zero_floor():
    s = stream(0, [], 1.0)
    h = corr.coincidence_histogram(s, s.shifted(0), 1e-9, (-1e-6, 1e-6))
    with pytest.raises(StatisticsError, match="zero floor"):
        corr.normalize_g2(h, "measured_floor")
    with pytest.raises(StatisticsError, match="zero floor"):
        corr.normalize_g2(h, "analytic_floor")


def test_histogram_addition():
    s, a = poisson_pair(2e3, 10.0, 1)
    h = corr.coincidence_histogram(s, a)
    both = h + h
    assert np.array_equal(both.counts, 2 * h.counts)
    assert both.duration == 2 * h.duration


# pairs with a known decay

def synthetic_pairs(rate, tau_b, duration, noise, seed):
    rng = np.random.default_rng(seed)
    ts = detection.poisson_times(rate, duration, rng)
    tas = ts + detection.to_ps(rng.exponential(tau_b, ts.size))
    tas = tas[tas < int(duration * 1e12)]
    ts = np.concatenate([ts, detection.poisson_times(noise, duration, rng)])
    tas = np.concatenate([tas, detection.poisson_times(noise, duration, rng)])
    return stream(0, ts, duration), stream(1, tas, duration)


def test_decay_fit_closure():
    s, a = synthetic_pairs(2000.0, 94e-9, 300.0, 1.5e4, 6)
    # the tail must reach well past 5 decay constants or the floor soaks up signal
    h = corr.coincidence_histogram(s, a, 1e-9, (-500e-9, 2000e-9))
    g = corr.normalize_g2(h)
    tau_b, err = corr.fit_histogram_decay(h, g)
    assert abs(tau_b - 94e-9) <= 3 * err
    rate, rate_err = corr.detected_pair_rate(h, g)
    # only bins within 5 decay constants of the peak are summed, so about 1% of
    # the pairs sit in the floor region; the estimator is biased low by that much
    assert rate == pytest.approx(2000.0, rel=0.02)
    assert rate_err < 5.0


def test_decay_fit_on_pure_floor_fails():
    s, a = poisson_pair(2e4, 50.0, 11)
    h = corr.coincidence_histogram(s, a, 1e-9, (-500e-9, 1000e-9))
    with pytest.raises(StatisticsError):
        corr.fit_histogram_decay(h)


def test_back_out_generation_rate(cfg_a1):
    eta = cfg_a1.channel_efficiency("s") * cfg_a1.channel_efficiency("as")
    assert corr.back_out_generation_rate(76.8, cfg_a1) == pytest.approx(76.8 / eta)
    assert corr.back_out_generation_rate(76.8, cfg_a1) == pytest.approx(2000.0, rel=1e-12)
    ideal = cfg_a1.with_values(**{"detectors.quantum_efficiency": 1.0, "detectors.fiber_coupling": 1.0,
                                  "filters.stokes.transmission": 1.0,
                                  "filters.anti_stokes.transmission": 1.0})
    assert corr.back_out_generation_rate(76.8, ideal) == pytest.approx(76.8)


# autocorrelation and Cauchy-Schwarz

def test_auto_g2_poisson_and_thermal():
    s, a = poisson_pair(2e4, 200.0, 12)
    g, err = corr.auto_g2_zero(s, a, 1e-9)
    assert g == pytest.approx(1.0, abs=4 * err)
    rng = np.random.default_rng(13)
    t = stream(0, detection.chaotic_times(2e4, 200.0, 50e-9, rng), 200.0)
    x, y = detection.split_stream(t, 0.5, 1)
    g, err = corr.auto_g2_zero(x, y, 1e-9)
    assert g == pytest.approx(2.0, abs=max(4 * err, 0.05))


def test_auto_g2_needs_counts():
    with pytest.raises(StatisticsError, match="insufficient"):
        corr.auto_g2_zero(stream(0, [10], 1.0), stream(1, [10_000], 1.0))


def test_cs_violation():
    chk = corr.cs_violation(1.0, 1.0, 1.0)
    assert chk.violation_factor == 1.0 and chk.verdict == "not_violated"
    chk = corr.cs_violation((11.0, 0.3), (2.0, 0.05), (2.0, 0.05))
    assert chk.violation_factor == pytest.approx(121 / 4)
    assert chk.verdict == "violated"
    rel = math.sqrt((2 * 0.3 / 11) ** 2 + 2 * (0.05 / 2) ** 2)
    assert chk.violation_stderr == pytest.approx(121 / 4 * rel)
    for bad in ((0, 1, 1), (1, -2, 1), (1, 1, 0)):
        with pytest.raises(ValueError):
            corr.cs_violation(*bad)


# heralded g2

def test_conditional_g2_exclusive_arms():
    # a single photon per herald routed to exactly one arm gives N123 = 0
    rng = np.random.default_rng(3)
    t1 = np.arange(1, 20_001, dtype=np.int64) * 10 ** 6
    photon = t1 + 5_000
    first = rng.random(photon.size) < 0.5
    r = corr.conditional_g2(t1, photon[first], photon[~first], [20e-9, 100e-9])
    assert r.n123.tolist() == [0, 0]
    assert np.all(r.g2c == 0)
    assert r.n12[0] + r.n13[0] == 20_000


def test_conditional_g2_matches_direct_count():
    rng = np.random.default_rng(21)
    t1 = np.sort(rng.integers(0, 10 ** 9, 500))
    ta = np.sort(rng.integers(0, 10 ** 9, 3000))
    tb = np.sort(rng.integers(0, 10 ** 9, 3000))
    w = 400_000
    r = corr.conditional_g2(t1, ta, tb, [w * 1e-12], offset=1e-9)
    start = t1 + 1000
    ha = np.array([np.any((ta >= x) & (ta < x + w)) for x in start])
    hb = np.array([np.any((tb >= x) & (tb < x + w)) for x in start])
    assert (r.n12[0], r.n13[0], r.n123[0]) == (ha.sum(), hb.sum(), (ha & hb).sum())


def test_conditional_g2_raises_without_heralded_clicks():
    with pytest.raises(StatisticsError, match="no heralded"):
        corr.conditional_g2(np.array([0]), np.array([10 ** 9]), np.array([5]), [1e-9])


def test_histogram_csv(tmp_path):
    s, a = poisson_pair(1e3, 5.0, 2)
    h = corr.coincidence_histogram(s, a, 1e-9, (-10e-9, 10e-9))
    corr.write_histogram_csv(tmp_path / "h.csv", h, config_fingerprint="abc")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("# config=abc") and lines[1] == "tau_ns,counts"
    assert len(lines) == 22
