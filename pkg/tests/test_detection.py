import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pulsedqfc.analysis import estimate_fwhm
from pulsedqfc.detection import (DetectorModel, Histogram, TimeTagStream, analyze_correlation, apply_dead_time,
                                 correlate, correlate_windows, delay_histogram, detect, hbt_split,
                                 pair_delay_counts, tcspc_bins, tcspc_histogram)
from pulsedqfc.errors import BinTooLarge, ConfigError, ConfigMismatch, NoSidePeaks
from pulsedqfc.waveform import ExGaussian


def poisson_stream(rate_per_s, duration, rng):
    n = rng.poisson(rate_per_s * duration * 1e-12)
    return TimeTagStream.from_times(rng.uniform(0, duration, n), duration)


def test_ideal_detector_is_identity(rng):
    s = TimeTagStream.from_times(rng.uniform(0, 1e6, 500), 1e6)
    out = detect(s, DetectorModel(), rng)
    np.testing.assert_array_equal(out.times, s.times)


def test_detector_validation():
    with pytest.raises(ConfigError):
        DetectorModel(efficiency=1.2)
    with pytest.raises(ConfigError):
        DetectorModel(jitter_fwhm=-1.0)


def test_jitter_width_on_delta_train():
    rng = np.random.default_rng(3)
    n = 200_000
    period = 40000.0
    s = TimeTagStream.from_times(np.arange(n) * period + 10000.0, n * period)
    out = detect(s, DetectorModel(jitter_fwhm=350.0), rng)
    h = tcspc_histogram(out, period, 8.0)
    w, _ = estimate_fwhm(h)
    assert w == pytest.approx(350.0, abs=10.0)
    resid = out.times - s.times
    assert np.std(resid) * 2 * math.sqrt(2 * math.log(2)) == pytest.approx(350.0, rel=0.01)


def test_dark_count_rate():
    rng = np.random.default_rng(4)
    empty = TimeTagStream.from_times([], 1e12)
    counts = len(detect(empty, DetectorModel(dark_rate=1000.0), rng))
    assert abs(counts - 1000) < 3 * math.sqrt(1000)


def test_efficiency_thinning():
    rng = np.random.default_rng(5)
    s = TimeTagStream.from_times(rng.uniform(0, 1e9, 100_000), 1e9)
    k = len(detect(s, DetectorModel(efficiency=0.6), rng))
    assert abs(k - 60_000) < 3 * math.sqrt(100_000 * 0.24)


def test_detected_tags_sorted_and_in_window():
    rng = np.random.default_rng(6)
    s = TimeTagStream.from_times(rng.uniform(0, 1e7, 5000), 1e7)
    out = detect(s, DetectorModel(0.5, 350.0, 1e6, 1000.0), rng)
    assert out.is_sorted()
    assert out.times.min() >= 0 and out.times.max() <= 1e7
    assert np.all(np.diff(out.times) >= 1000.0)


@given(st.lists(st.floats(0, 1e6), max_size=200), st.floats(0.0, 5000.0))
def test_dead_time_spacing(times, dead):
    t = np.sort(np.array(times, dtype=float))
    keep = apply_dead_time(t, dead)
    kept = t[keep]
    if kept.size > 1 and dead > 0:
        assert np.all(np.diff(kept) >= dead)
    if t.size:
        assert keep[0]


def test_tcspc_flat_for_uniform_tags():
    rng = np.random.default_rng(7)
    s = poisson_stream(1e6, 1e11, rng)
    h = tcspc_histogram(s, 20000.0, 256.0)
    full = h.counts[:-1]  # last bin is partial
    chi2 = float(np.sum((full - full.mean()) ** 2 / full.mean()))
    assert stats.chi2.sf(chi2, full.size - 1) > 0.001
    assert h.total == len(s)


def test_tcspc_matches_exgaussian_shape():
    rng = np.random.default_rng(8)
    n = 400_000
    period = 40000.0
    trig = np.arange(n) * period
    t = trig + 5000.0 + rng.exponential(1500.0, n) + rng.normal(0, 350.0 / 2.3548200450309493, n)
    h = tcspc_histogram(t, period, 64.0)
    model = ExGaussian(5000.0, 1500.0, 350.0).normalize()
    expected = n * np.diff(model.cdf(h.edges))
    sel = expected > 50
    chi2 = float(np.sum((h.counts[sel] - expected[sel]) ** 2 / expected[sel]))
    assert chi2 / sel.sum() < 1.3


def test_tcspc_bin_too_large():
    with pytest.raises(BinTooLarge):
        tcspc_bins(20000.0, 30000.0)
    assert tcspc_bins(20000.0, 16.0) == 1250
    assert tcspc_bins(20000.0, 256.0) == 79


@given(st.lists(st.floats(-1e7, 1e7), min_size=1, max_size=300), st.floats(1.0, 5000.0),
       st.floats(-5000.0, 5000.0))
def test_tcspc_conserves_counts(times, bw, offset):
    h = tcspc_histogram(np.array(times), 20000.0, bw, offset)
    assert h.total == len(times)


def test_hbt_split(rng):
    s = TimeTagStream.from_times(rng.uniform(0, 1e9, 100_000), 1e9)
    a, b = hbt_split(s, rng)
    assert len(a) + len(b) == len(s)
    assert abs(len(a) - 50_000) < 3 * math.sqrt(25_000)
    assert np.all(a.channels == 0) and np.all(b.channels == 1)
    merged = a.merge(b)
    np.testing.assert_array_equal(merged.times, s.times)


def test_independent_streams_give_flat_g2():
    rng = np.random.default_rng(9)
    a = poisson_stream(2e5, 2e11, rng)
    b = poisson_stream(2e5, 2e11, rng)
    res = correlate(a, b, 1e5, 256.0, 40000.0, 20000.0)
    assert res.g2_zero == pytest.approx(1.0, abs=4 * res.g2_zero_err)
    assert np.mean(res.g2) == pytest.approx(1.0, rel=0.02)


def test_antibunched_source():
    # one photon per pulse split between arms: no coincidences at zero delay
    rng = np.random.default_rng(10)
    n = 200_000
    s = TimeTagStream.from_times(np.arange(n) * 20000.0 + rng.normal(0, 100, n), n * 20000.0)
    a, b = hbt_split(s, rng)
    res = correlate(a, b, 1e5, 256.0, 20000.0, 20000.0)
    assert res.zero_area == 0 and res.g2_zero == 0.0
    assert res.interpeak_per_bin == 0.0


def test_no_side_peaks():
    with pytest.raises(NoSidePeaks):
        correlate(TimeTagStream.from_times([1.0], 10.0), TimeTagStream.from_times([2.0], 10.0),
                  10000.0, 256.0, 40000.0, 20000.0)


def test_pair_delay_counts_brute_force(rng):
    ta = np.sort(rng.uniform(0, 1e6, 300))
    tb = np.sort(rng.uniform(0, 1e6, 300))
    got = pair_delay_counts(ta, tb, 50000.0, 256.0, block=17)
    d = (tb[None, :] - ta[:, None]).ravel()
    k = np.rint(d / 256.0).astype(int)
    m = (got.size - 1) // 2
    k = k[np.abs(k) <= m]
    want = np.bincount(k + m, minlength=got.size)
    np.testing.assert_array_equal(got, want)


@given(st.integers(1, 9), st.integers(0, 10**6))
def test_correlate_windows_exact(n_windows, seed):
    rng = np.random.default_rng(seed)
    a = TimeTagStream.from_times(rng.uniform(0, 1e7, 400), 1e7)
    b = TimeTagStream.from_times(rng.uniform(0, 1e7, 400), 1e7)
    edges = np.linspace(0, 1e7, n_windows + 1)
    edges[-1] = np.nextafter(1e7, np.inf)
    whole = pair_delay_counts(a.times, b.times, 1e5, 256.0)
    np.testing.assert_array_equal(correlate_windows(a, b, edges, 1e5, 256.0), whole)


def test_histogram_addition_and_mismatch():
    h1 = Histogram(0.0, 16.0, np.ones(10))
    h2 = Histogram(0.0, 16.0, 2 * np.ones(10))
    assert (h1 + h2).total == 30
    with pytest.raises(ConfigMismatch):
        h1 + Histogram(0.0, 32.0, np.ones(10))
    with pytest.raises(ValueError):
        Histogram(0.0, 0.0, np.ones(3))


def test_csv_headers(tmp_path, rng):
    h = Histogram(-100.0, 16.0, np.arange(5))
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_center_ps,counts" and lines[1] == "-92.000,0"
    a = poisson_stream(2e5, 1e10, rng)
    b = poisson_stream(2e5, 1e10, rng)
    res = correlate(a, b, 1e5, 256.0, 40000.0, 20000.0)
    res.to_csv(tmp_path / "g2.csv")
    rows = (tmp_path / "g2.csv").read_text().splitlines()
    assert rows[0] == "tau_ps,counts,g2" and len(rows) == res.histogram.counts.size + 1


def test_peak_windows_and_satellites():
    # synthetic delay histogram: main peaks every 40 ns, satellites at 20 ns
    bw, m = 256.0, 390
    counts = np.zeros(2 * m + 1, dtype=np.int64)
    h = delay_histogram(counts, bw)
    for j in range(-4, 5):
        k = int(round(j * 20000.0 / bw)) + m
        counts[k] = 100 if j % 2 == 0 else 10
    counts[m] = 40
    res = analyze_correlation(Histogram(h.start, bw, counts), 40000.0, 20000.0)
    assert res.g2_zero == pytest.approx(0.4)
    assert res.satellite_ratio == pytest.approx(0.1)
    assert res.window_bins == 38
