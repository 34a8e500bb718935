"""Detector response, TCSPC histograms and HBT cross-correlation.

Time tags are float64 picoseconds.  Correlation delays are ``t_b - t_a``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import BinTooLarge, ConfigError, ConfigMismatch, NoSidePeaks
from .waveform import fwhm_to_sigma

DEFAULT_G2_BIN_PS = 256.0
DEFAULT_G2_MAX_DELAY_PS = 100_000.0
# inter-peak background: bins within this fraction of the peak spacing of a midpoint
INTERPEAK_HALF_FRACTION = 0.1


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    jitter_fwhm: float = 0.0
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError("detector efficiency must lie in [0, 1]")
        if self.jitter_fwhm < 0 or self.dark_rate < 0 or self.dead_time < 0:
            raise ConfigError("jitter_fwhm, dark_rate and dead_time must be >= 0")


@dataclass(eq=False)
class TimeTagStream:
    """Time-ordered tags with channel labels on the window [start, start + duration]."""

    times: np.ndarray
    channels: np.ndarray
    duration: float
    start: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.channels = np.asarray(self.channels, dtype=np.int8)
        if self.times.shape != self.channels.shape:
            raise ValueError("times and channels must have the same length")

    @classmethod
    def from_times(cls, times, duration: float, channel: int = 0, start: float = 0.0) -> "TimeTagStream":
        t = np.sort(np.asarray(times, dtype=float))
        return cls(t, np.full(t.size, channel, dtype=np.int8), duration, start)

    def __len__(self) -> int:
        return self.times.size

    @property
    def stop(self) -> float:
        return self.start + self.duration

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.times) >= 0))

    def channel(self, ch: int) -> "TimeTagStream":
        m = self.channels == ch
        return TimeTagStream(self.times[m], self.channels[m], self.duration, self.start)

    def merge(self, other: "TimeTagStream") -> "TimeTagStream":
        t = np.concatenate([self.times, other.times])
        c = np.concatenate([self.channels, other.channels])
        order = np.argsort(t, kind="stable")
        start = min(self.start, other.start)
        stop = max(self.stop, other.stop)
        return TimeTagStream(t[order], c[order], stop - start, start)


@dataclass(eq=False)
class Histogram:
    """Counts in uniform bins ``[start + i*bin_width, start + (i+1)*bin_width)``."""

    start: float
    bin_width: float
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("histogram needs at least one bin")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")

    @property
    def centers(self) -> np.ndarray:
        return self.start + self.bin_width * (np.arange(self.counts.size) + 0.5)

    @property
    def edges(self) -> np.ndarray:
        return self.start + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def compatible(self, other: "Histogram") -> bool:
        return (self.start == other.start and self.bin_width == other.bin_width
                and self.counts.size == other.counts.size)

    def __add__(self, other: "Histogram") -> "Histogram":
        if not self.compatible(other):
            raise ConfigMismatch("histograms differ in binning and cannot be added")
        return Histogram(self.start, self.bin_width, self.counts + other.counts, dict(self.meta))

    def to_csv(self, path: str | Path, extra: dict[str, np.ndarray] | None = None) -> None:
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center_ps", "counts", *extra])
            cols = [extra[k] for k in extra]
            for i, (c, n) in enumerate(zip(self.centers, self.counts)):
                w.writerow([f"{c:.3f}", int(n), *(f"{col[i]:.8g}" for col in cols)])


@dataclass(eq=False)
class CorrelationResult:
    """Coincidence histogram over delay with area-normalised g2.

    Peak areas are sums over ``2*window_bins + 1`` bins centred on each peak;
    the normalisation is the mean area of the side peaks at nonzero multiples
    of ``peak_period``.
    """

    histogram: Histogram
    peak_period: float
    excitation_period: float
    window_bins: int
    normalization: float
    g2_zero: float
    g2_zero_err: float
    zero_area: int
    side_areas: dict[int, int]
    satellite_areas: dict[int, int]
    interpeak_per_bin: float
    interpeak_per_bin_err: float
    interpeak_bins: int

    @property
    def tau(self) -> np.ndarray:
        return self.histogram.centers

    @property
    def g2(self) -> np.ndarray:
        """Per-bin g2, scaled so a flat uncorrelated background reads 1."""
        return self.histogram.counts * (2 * self.window_bins + 1) / self.normalization

    @property
    def satellite_ratio(self) -> float:
        if not self.satellite_areas:
            return math.nan
        return float(np.mean(list(self.satellite_areas.values()))) / self.normalization

    @property
    def satellite_ratio_err(self) -> float:
        if not self.satellite_areas:
            return math.nan
        s = sum(self.satellite_areas.values())
        n = sum(self.side_areas.values())
        r = self.satellite_ratio
        return r * math.sqrt(1.0 / max(s, 1) + 1.0 / max(n, 1))

    @property
    def interpeak_level(self) -> float:
        """Inter-peak background per bin in g2 units."""
        return self.interpeak_per_bin * (2 * self.window_bins + 1) / self.normalization

    def summary(self) -> dict:
        return {
            "g2_zero": self.g2_zero,
            "g2_zero_err": self.g2_zero_err,
            "normalization": self.normalization,
            "normalization_method": "mean side-peak area",
            "peak_period_ps": self.peak_period,
            "peak_window_ps": (2 * self.window_bins + 1) * self.histogram.bin_width,
            "zero_area": self.zero_area,
            "side_areas": {str(k): v for k, v in sorted(self.side_areas.items())},
            "satellite_areas": {str(k): v for k, v in sorted(self.satellite_areas.items())},
            "satellite_ratio": self.satellite_ratio,
            "satellite_ratio_err": self.satellite_ratio_err,
            "interpeak_counts_per_bin": self.interpeak_per_bin,
            "interpeak_counts_per_bin_err": self.interpeak_per_bin_err,
            "interpeak_level_g2": self.interpeak_level,
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_ps", "counts", "g2"])
            for t, n, g in zip(self.tau, self.histogram.counts, self.g2):
                w.writerow([f"{t:.3f}", int(n), f"{g:.8g}"])


# -- detector ------------------------------------------------------------------

@njit(cache=True)
def _dead_time_mask(times, dead_time):
    keep = np.zeros(times.size, dtype=np.bool_)
    last = -np.inf
    for i in range(times.size):
        if times[i] - last >= dead_time:
            keep[i] = True
            last = times[i]
    return keep


def apply_dead_time(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Boolean mask of sorted tags that survive a non-paralysable dead time."""
    times = np.asarray(times, dtype=float)
    if dead_time <= 0 or times.size == 0:
        return np.ones(times.size, dtype=bool)
    return _dead_time_mask(times, float(dead_time))


def detect(stream: TimeTagStream, d: DetectorModel, rng: np.random.Generator,
           channel: int | None = None) -> TimeTagStream:
    """Apply efficiency, Gaussian jitter, dark counts and dead time.

    Dark counts are drawn uniformly over the stream window.  Output tags are
    sorted and clamped to the window; all carry ``channel`` (default: keep).
    """
    t = stream.times
    c = stream.channels
    if d.efficiency < 1.0:
        keep = rng.random(t.size) < d.efficiency
        t, c = t[keep], c[keep]
    if d.jitter_fwhm > 0:
        t = t + rng.normal(0.0, fwhm_to_sigma(d.jitter_fwhm), t.size)
    if d.dark_rate > 0:
        n_dark = rng.poisson(d.dark_rate * stream.duration * 1e-12)
        dark = rng.uniform(stream.start, stream.stop, n_dark)
        dark_ch = channel if channel is not None else (int(c[0]) if c.size else 0)
        t = np.concatenate([t, dark])
        c = np.concatenate([c, np.full(n_dark, dark_ch, dtype=np.int8)])
    order = np.argsort(t, kind="stable")
    t, c = t[order], c[order]
    if d.dead_time > 0 and t.size:
        keep = apply_dead_time(t, d.dead_time)
        t, c = t[keep], c[keep]
    t = np.clip(t, stream.start, stream.stop)
    if channel is not None:
        c = np.full(t.size, channel, dtype=np.int8)
    return TimeTagStream(t, c, stream.duration, stream.start)


def hbt_split(stream: TimeTagStream, rng: np.random.Generator) -> tuple[TimeTagStream, TimeTagStream]:
    """Route each tag to arm A (channel 0) or arm B (channel 1) with probability 1/2."""
    to_a = rng.random(len(stream)) < 0.5
    a = TimeTagStream(stream.times[to_a], np.zeros(int(to_a.sum()), np.int8), stream.duration, stream.start)
    b = TimeTagStream(stream.times[~to_a], np.ones(int((~to_a).sum()), np.int8), stream.duration, stream.start)
    return a, b


# -- histogramming ---------------------------------------------------------------

def tcspc_bins(sync_period: float, bin_width: float) -> int:
    """Number of bins covering one sync period (the last one may be partial)."""
    if bin_width > sync_period:
        raise BinTooLarge(f"bin width {bin_width} ps exceeds the sync period {sync_period} ps")
    return int(math.ceil(sync_period / bin_width - 1e-9))


def tcspc_counts(times: np.ndarray, sync_period: float, bin_width: float, offset: float = 0.0) -> np.ndarray:
    nbins = tcspc_bins(sync_period, bin_width)
    phase = np.mod(np.asarray(times, dtype=float) - offset, sync_period)
    idx = np.minimum((phase // bin_width).astype(np.int64), nbins - 1)
    return np.bincount(idx, minlength=nbins)


def tcspc_histogram(tags, sync_period: float, bin_width: float, offset: float = 0.0) -> Histogram:
    """Histogram of tag phase relative to a sync of period ``sync_period``.

    Phases are folded into ``[offset, offset + sync_period)``.  When the
    period is not a multiple of the bin width the last bin is shorter.
    """
    times = tags.times if isinstance(tags, TimeTagStream) else np.asarray(tags, dtype=float)
    counts = tcspc_counts(times, sync_period, bin_width, offset)
    return Histogram(offset, bin_width, counts, {"sync_period_ps": sync_period})


def delay_bins(max_delay: float, bin_width: float) -> int:
    """Half-width M of the delay histogram: bins are centred on k*bin_width, |k| <= M."""
    return int(math.floor(max_delay / bin_width + 1e-9))


def pair_delay_counts(ta: np.ndarray, tb: np.ndarray, max_delay: float, bin_width: float,
                      block: int = 1 << 20) -> np.ndarray:
    """Counts of all pairwise delays ``tb - ta`` binned around zero.

    Both inputs must be sorted.  The partner range of every ``a`` tag is
    found by binary search, which is the vectorised form of a two-pointer
    sweep.
    """
    m = delay_bins(max_delay, bin_width)
    counts = np.zeros(2 * m + 1, dtype=np.int64)
    reach = (m + 0.5) * bin_width
    for s in range(0, ta.size, block):
        a = ta[s:s + block]
        lo = np.searchsorted(tb, a - reach, side="left")
        hi = np.searchsorted(tb, a + reach, side="left")
        n = hi - lo
        total = int(n.sum())
        if total == 0:
            continue
        rep_a = np.repeat(a, n)
        first = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
        idx = first + np.arange(total)
        k = np.rint((tb[idx] - rep_a) / bin_width).astype(np.int64)
        k = k[np.abs(k) <= m]
        counts += np.bincount(k + m, minlength=2 * m + 1)
    return counts


def delay_histogram(counts: np.ndarray, bin_width: float) -> Histogram:
    m = (counts.size - 1) // 2
    return Histogram(-(m + 0.5) * bin_width, bin_width, counts)


def correlate(a: TimeTagStream, b: TimeTagStream, max_delay: float = DEFAULT_G2_MAX_DELAY_PS,
              bin_width: float = DEFAULT_G2_BIN_PS, peak_period: float = 40_000.0,
              excitation_period: float | None = None) -> CorrelationResult:
    """Start-stop cross-correlation of two arms with area-normalised g2(0)."""
    counts = pair_delay_counts(a.times, b.times, max_delay, bin_width)
    return analyze_correlation(delay_histogram(counts, bin_width), peak_period,
                               excitation_period if excitation_period is not None else peak_period)


def correlate_windows(a: TimeTagStream, b: TimeTagStream, boundaries, max_delay: float = DEFAULT_G2_MAX_DELAY_PS,
                      bin_width: float = DEFAULT_G2_BIN_PS) -> np.ndarray:
    """Delay counts accumulated shard by shard.

    ``a`` tags are partitioned by ``boundaries``; each shard is correlated
    against the ``b`` tags of its window widened by ``max_delay`` on both
    sides, so the sum equals the single-pass result exactly.
    """
    m = delay_bins(max_delay, bin_width)
    reach = (m + 0.5) * bin_width
    edges = np.asarray(boundaries, dtype=float)
    counts = np.zeros(2 * m + 1, dtype=np.int64)
    for lo, hi in zip(edges[:-1], edges[1:]):
        ia = slice(np.searchsorted(a.times, lo), np.searchsorted(a.times, hi))
        ib = slice(np.searchsorted(b.times, lo - reach), np.searchsorted(b.times, hi + reach))
        counts += pair_delay_counts(a.times[ia], b.times[ib], max_delay, bin_width)
    return counts


def _peak_area(counts: np.ndarray, m: int, center_bin: int, half: int) -> int | None:
    lo, hi = center_bin - half + m, center_bin + half + m
    if lo < 0 or hi >= counts.size:
        return None
    return int(counts[lo:hi + 1].sum())


def analyze_correlation(hist: Histogram, peak_period: float, excitation_period: float) -> CorrelationResult:
    """Peak areas, g2(0), satellite areas and inter-peak background of a delay histogram."""
    counts = hist.counts
    bw = hist.bin_width
    m = (counts.size - 1) // 2
    # windows of equal bin count that never overlap their neighbours
    half = max(int(math.floor((excitation_period / bw - 1.0) / 2.0)), 0)
    zero = _peak_area(counts, m, 0, half)
    if zero is None:
        raise NoSidePeaks("delay histogram is narrower than one peak window")
    sides, sats = {}, {}
    n_max = int(m * bw // excitation_period) + 1
    step = int(round(peak_period / excitation_period))
    for j in range(-n_max, n_max + 1):
        if j == 0:
            continue
        area = _peak_area(counts, m, int(round(j * excitation_period / bw)), half)
        if area is None:
            continue
        if j % step == 0:
            sides[j] = area
        else:
            sats[j] = area
    if not sides:
        raise NoSidePeaks(f"max delay {m * bw:g} ps holds no side peak at multiples of {peak_period:g} ps")
    norm = float(np.mean(list(sides.values())))
    if norm <= 0:
        raise NoSidePeaks("side peaks are empty")
    g2 = zero / norm
    g2_err = g2 * math.sqrt(1.0 / max(zero, 1) + 1.0 / max(sum(sides.values()), 1))
    # inter-peak region: bins close to midpoints between excitation slots
    tau = np.abs(hist.centers)
    frac = np.mod(tau / excitation_period, 1.0)
    inter = np.abs(frac - 0.5) <= INTERPEAK_HALF_FRACTION
    n_inter = int(inter.sum())
    ip = float(counts[inter].mean()) if n_inter else math.nan
    ip_err = math.sqrt(max(counts[inter].sum(), 1)) / n_inter if n_inter else math.nan
    return CorrelationResult(hist, peak_period, excitation_period, half, norm, g2, g2_err, zero,
                             sides, sats, ip, ip_err, n_inter)


def add_correlations(results: list[CorrelationResult]) -> CorrelationResult:
    h = results[0].histogram
    for r in results[1:]:
        h = h + r.histogram
    r0 = results[0]
    return analyze_correlation(h, r0.peak_period, r0.excitation_period)
