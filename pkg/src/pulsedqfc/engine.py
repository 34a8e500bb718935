"""Monte-Carlo runs of the full chain: source, pump, conversion, noise, detection, analysis.

Triggers are processed in chunks of ``chunk_triggers``.  Within a chunk the
triggers that yield a collected photon are drawn as a Bernoulli process (by
geometric gaps), which is equivalent to a per-trigger coin flip but costs
time proportional to the number of photons.  Raman events are drawn for the
chunk's time window by thinning.

Seeding: every random stream is a PCG64 generator seeded with
``SeedSequence([seed_lo, seed_hi, shard, chunk, crc32(purpose)])``.  Results
depend on (seed, shard count, chunk size) only, never on the number of worker
processes.

Chunks and shards are joined by correlating the tags near each boundary
(within ``max_delay`` plus a spill margin) across the seam, so sharded and
single-pass delay histograms are identical for the same tags.
"""
from __future__ import annotations

import csv
import json
import math
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .config import ScenarioConfig
from .conversion import (ConversionModel, PhotonSource, check_qpm, conversion_mask, net_efficiency,
                         optimal_delay, raman_times)
from .detection import (DetectorModel, Histogram, analyze_correlation, apply_dead_time, delay_bins,
                        delay_histogram, pair_delay_counts, tcspc_bins, tcspc_counts)
from .errors import ConfigError, ConfigMismatch, PulsedQFCError, QpmViolation
from .timing import PumpPulseTrain, make_pump_train
from .waveform import fwhm_to_sigma

PURPOSES = ("emission", "multiphoton", "conversion", "raman", "split", "detector_a", "detector_b")
# latest a converted photon can trail its trigger, in lifetimes
SPILL_LIFETIMES = 60.0
JITTER_SIGMAS = 12.0


def stream_seed(seed: int, *key) -> np.random.SeedSequence:
    """Seed sequence for one random stream; string keys enter via CRC-32."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for k in key:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(words)


def derived_seed(seed: int, *key) -> int:
    """Integer seed for a derived run (sweep points, background runs)."""
    return int(stream_seed(seed, *key).generate_state(1, dtype=np.uint64)[0] >> 1)


def _rngs(seed: int, shard: int, chunk: int) -> dict[str, np.random.Generator]:
    return {p: np.random.Generator(np.random.PCG64(stream_seed(seed, shard, chunk, p))) for p in PURPOSES}


# -- resolution ---------------------------------------------------------------------

@dataclass(frozen=True)
class ResolvedScenario:
    """A scenario with the pump delay and calibrations fixed."""

    cfg: ScenarioConfig
    train: PumpPulseTrain
    model: ConversionModel
    source: PhotonSource
    net_efficiency: float
    offwindow_efficiency: float
    window_fraction: float
    prediction: analysis.HbtPrediction

    @property
    def cw(self) -> bool:
        return self.train.cw

    @property
    def sync_period(self) -> float:
        t = self.cfg.timing
        if self.cfg.analysis.sync == "excitation" or self.cw:
            return t.excitation_period
        return t.pump_period

    @property
    def peak_period(self) -> float:
        t = self.cfg.timing
        return t.excitation_period if self.cw else t.pump_period

    @property
    def reach(self) -> float:
        a = self.cfg.analysis
        return (delay_bins(a.g2_max_delay_ps, a.g2_bin_ps) + 0.5) * a.g2_bin_ps

    @property
    def margin(self) -> float:
        jit = max(d.jitter_fwhm for d in self.cfg.detectors)
        spill = SPILL_LIFETIMES * self.source.lifetime + JITTER_SIGMAS * fwhm_to_sigma(jit)
        return self.reach + spill + self.cfg.timing.excitation_period

    def to_dict(self) -> dict:
        p = self.prediction
        return {
            "pump_delay_ps": self.train.delay,
            "pump_fwhm_ps": self.train.fwhm,
            "raman_coeff_per_s_per_mw": self.model.raman_coeff,
            "multiphoton_prob": self.source.multiphoton_prob,
            "net_efficiency": self.net_efficiency,
            "offwindow_efficiency": self.offwindow_efficiency,
            "g2_window_fraction": self.window_fraction,
            "predicted_g2_zero": p.g2_zero,
            "predicted_satellite_ratio": None if math.isnan(p.satellite_ratio) else p.satellite_ratio,
        }


def resolve(cfg: ScenarioConfig) -> ResolvedScenario:
    """Fix the pump delay and run the configured calibrations."""
    t, pump = cfg.timing, cfg.pump
    train = make_pump_train(t, pump.peak_power_mw, pump.extinction_ratio_db, pump.shape, pump.edge_fwhm_ps)
    model, source = cfg.conversion, cfg.source
    check_qpm(train, model)
    photon = source.wavepacket(0.0)
    if not train.cw and pump.delay == "optimal":
        d, _ = optimal_delay(photon, train, model)
        train = train.with_delay(d)
    det = cfg.detectors[0]
    cal = cfg.calibration
    if cal.raman_rho is not None:
        cw_train = PumpPulseTrain(None, train.period, train.peak_power, train.extinction_ratio)
        try:
            k = analysis.calibrate_raman_coeff(cal.raman_rho, source, cw_train, model, det, t.excitation_period)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{cfg.name}: Raman calibration failed: {exc}") from exc
        model = replace(model, raman_coeff=k)
    a = cfg.analysis
    half = max(int(math.floor((t.excitation_period / a.g2_bin_ps - 1.0) / 2.0)), 0)
    wf = min((2 * half + 1) * a.g2_bin_ps / t.excitation_period, 1.0)
    if cal.multiphoton_g2 is not None:
        try:
            p = analysis.calibrate_multiphoton(cal.multiphoton_g2, source, train, model, det,
                                               t.excitation_period, t.pump_divider, wf)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{cfg.name}: multiphoton calibration failed: {exc}") from exc
        source = replace(source, multiphoton_prob=p)
    eff = net_efficiency(photon, train, model)
    if train.cw or t.pump_divider == 1:
        off = eff
    else:
        off = float(np.mean([net_efficiency(source.wavepacket(k * t.excitation_period), train, model)
                             for k in range(1, t.pump_divider)]))
    slots = analysis.slot_means(source, train, model, det, t.excitation_period, t.pump_divider)
    pred = analysis.hbt_prediction(slots, wf)
    return ResolvedScenario(cfg, train, model, source, eff, off, wf, pred)


# -- simulation ----------------------------------------------------------------------

def bernoulli_indices(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices in [0, n) of successes of ``n`` independent Bernoulli(q) trials."""
    if n <= 0 or q <= 0:
        return np.empty(0, dtype=np.int64)
    if q >= 1:
        return np.arange(n, dtype=np.int64)
    batch = int(n * q + 6.0 * math.sqrt(n * q) + 16)
    parts, pos = [], -1
    while pos < n - 1:
        # a gap past n ends the range; clipping keeps the cumsum from overflowing
        idx = pos + np.cumsum(np.minimum(rng.geometric(q, batch), n + 1))
        parts.append(idx)
        pos = int(idx[-1])
    idx = np.concatenate(parts)
    return idx[idx < n]


@dataclass
class _Tally:
    tcspc_a: np.ndarray
    tcspc_b: np.ndarray
    corr: np.ndarray
    counters: dict[str, int]
    head: tuple[np.ndarray, np.ndarray]
    tail: tuple[np.ndarray, np.ndarray]


def _detect_arm(times: np.ndarray, det: DetectorModel, lo: float, hi: float,
                rng: np.random.Generator) -> np.ndarray:
    if det.efficiency < 1.0:
        times = times[rng.random(times.size) < det.efficiency]
    if det.jitter_fwhm > 0:
        times = times + rng.normal(0.0, fwhm_to_sigma(det.jitter_fwhm), times.size)
    if det.dark_rate > 0:
        n_dark = rng.poisson(det.dark_rate * (hi - lo) * 1e-12)
        times = np.concatenate([times, rng.uniform(lo, hi, n_dark)])
    times = np.sort(times, kind="stable")
    if det.dead_time > 0:
        times = times[apply_dead_time(times, det.dead_time)]
    return times


def _seam(tail: tuple[np.ndarray, np.ndarray], head: tuple[np.ndarray, np.ndarray],
          max_delay: float, bin_width: float) -> np.ndarray:
    """Delay counts of pairs with one tag on each side of a boundary."""
    return (pair_delay_counts(tail[0], head[1], max_delay, bin_width)
            + pair_delay_counts(head[0], tail[1], max_delay, bin_width))


def _edges(times: np.ndarray, lo: float, hi: float, margin: float) -> tuple[np.ndarray, np.ndarray]:
    head = times[: np.searchsorted(times, lo + margin, side="left")]
    tail = times[np.searchsorted(times, hi - margin, side="left"):]
    return head, tail


def _simulate_chunk(res: ResolvedScenario, k0: int, k1: int, rng: dict[str, np.random.Generator]) -> _Tally:
    cfg = res.cfg
    t = cfg.timing
    a = cfg.analysis
    T = t.excitation_period
    n = k1 - k0
    c = res.source.collection_efficiency
    idx1 = bernoulli_indices(n, c * res.source.emission_prob_per_pulse, rng["emission"])
    times1 = (k0 + idx1) * T + rng["emission"].exponential(res.source.lifetime, idx1.size)
    idx2 = bernoulli_indices(n, c * res.source.multiphoton_prob, rng["multiphoton"])
    times2 = (k0 + idx2) * T + rng["multiphoton"].exponential(res.source.lifetime, idx2.size)
    trig = np.concatenate([k0 + idx1, k0 + idx2])
    photons = np.concatenate([times1, times2])
    ok = conversion_mask(photons, res.train, res.model, rng["conversion"])
    gated = np.ones(trig.size, bool) if res.cw else (trig % t.pump_divider == 0)
    counters = {
        "triggers": n,
        "collected_gated": int(gated.sum()),
        "converted_gated": int((ok & gated).sum()),
        "collected_ungated": int((~gated).sum()),
        "converted_ungated": int((ok & ~gated).sum()),
    }
    lo, hi = k0 * T, k1 * T
    raman = raman_times(res.train, res.model, lo, hi, rng["raman"])
    counters["raman"] = int(raman.size)
    stream = np.concatenate([photons[ok], raman])
    to_a = rng["split"].random(stream.size) < 0.5
    ta = _detect_arm(stream[to_a], cfg.detectors[0], lo, hi, rng["detector_a"])
    tb = _detect_arm(stream[~to_a], cfg.detectors[1], lo, hi, rng["detector_b"])
    counters["detected_a"] = int(ta.size)
    counters["detected_b"] = int(tb.size)
    sync, bw, off = res.sync_period, a.tcspc_bin_ps, a.tcspc_offset_ps
    if a.g2:
        corr = pair_delay_counts(ta, tb, a.g2_max_delay_ps, a.g2_bin_ps)
    else:
        corr = np.zeros(2 * delay_bins(a.g2_max_delay_ps, a.g2_bin_ps) + 1, dtype=np.int64)
    ha, tla = _edges(ta, lo, hi, res.margin)
    hb, tlb = _edges(tb, lo, hi, res.margin)
    return _Tally(tcspc_counts(ta, sync, bw, off), tcspc_counts(tb, sync, bw, off), corr, counters,
                  (ha, hb), (tla, tlb))


# -- summaries -----------------------------------------------------------------------

@dataclass(eq=False)
class RunSummary:
    """Histograms, counters and the statistics derived from them.

    ``stats`` is always recomputed from the stored histograms and counters
    (see :func:`compute_statistics`).  ``wall_clock_s`` is kept out of the
    JSON output so that outputs are byte-identical across runs.
    """

    resolved: ResolvedScenario
    seed: int
    shards: tuple[int, ...]
    trigger_range: tuple[int, int]
    counters: dict[str, int]
    tcspc_a: Histogram
    tcspc_b: Histogram
    correlation: Histogram
    stats: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    _head: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    _tail: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def cfg(self) -> ScenarioConfig:
        return self.resolved.cfg

    @property
    def tcspc(self) -> Histogram:
        """Both arms together."""
        return self.tcspc_a + self.tcspc_b

    @property
    def duration_s(self) -> float:
        lo, hi = self.trigger_range
        return (hi - lo) * self.cfg.timing.excitation_period * 1e-12

    def correlation_result(self):
        r = self.resolved
        return analyze_correlation(self.correlation, r.peak_period, self.cfg.timing.excitation_period)

    def to_dict(self) -> dict:
        return _clean({
            "scenario": self.cfg.name,
            "config_fingerprint": self.cfg.fingerprint(),
            "schema_version": self.cfg.schema_version,
            "seed": self.seed,
            "shards": len(self.shards),
            "chunk_triggers": self.cfg.chunk_triggers,
            "triggers": self.trigger_range[1] - self.trigger_range[0],
            "duration_s": self.duration_s,
            "resolved": self.resolved.to_dict(),
            "counters": dict(sorted(self.counters.items())),
            "statistics": self.stats,
            "histograms": {
                "tcspc": {"file": "histogram_tcspc.csv", "bin_width_ps": self.tcspc_a.bin_width,
                          "start_ps": self.tcspc_a.start, "sync_period_ps": self.resolved.sync_period},
                "tcspc_a": {"file": "histogram_tcspc_a.csv"},
                "tcspc_b": {"file": "histogram_tcspc_b.csv"},
                "correlation": {"file": "g2.csv", "bin_width_ps": self.correlation.bin_width,
                                "max_delay_ps": self.cfg.analysis.g2_max_delay_ps},
            },
        })


def _clean(obj):
    # JSON has no NaN; emit null instead
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def _sub_histogram(h: Histogram, window: tuple[float, float] | None) -> Histogram:
    if window is None:
        return h
    sel = np.flatnonzero((h.centers >= window[0]) & (h.centers <= window[1]))
    if sel.size == 0:
        raise ConfigError(f"window {window} does not overlap the histogram")
    return Histogram(h.start + sel[0] * h.bin_width, h.bin_width, h.counts[sel[0]:sel[-1] + 1].copy(), h.meta)


def _binomial(k: int, n: int, p_ref: float) -> dict:
    if n == 0:
        return {"value": math.nan, "err": math.nan, "n": 0, "reference": p_ref, "z": math.nan}
    err = math.sqrt(max(p_ref * (1.0 - p_ref), 0.0) / n)
    v = k / n
    return {"value": v, "err": err, "n": n, "reference": p_ref,
            "z": (v - p_ref) / err if err > 0 else (0.0 if v == p_ref else math.inf)}


def compute_statistics(s: RunSummary) -> dict:
    """All reported statistics, derived from the summary's histograms and counters."""
    r, cfg, a = s.resolved, s.cfg, s.cfg.analysis
    c = s.counters
    dur = s.duration_s
    t = cfg.timing
    src = r.source
    out: dict = {
        "net_efficiency": r.net_efficiency,
        "mc_efficiency": _binomial(c["converted_gated"], c["collected_gated"], r.net_efficiency),
        "mc_offwindow_efficiency": _binomial(c["converted_ungated"], c["collected_ungated"],
                                             r.offwindow_efficiency),
        "rates_per_s": {
            "converted_analytic": t.excitation_rate * src.collection_efficiency
            * src.emission_prob_per_pulse * r.net_efficiency,
            "converted": (c["converted_gated"] + c["converted_ungated"]) / dur,
            "raman": c["raman"] / dur,
            "detected_a": c["detected_a"] / dur,
            "detected_b": c["detected_b"] / dur,
        },
    }
    name = cfg.name
    if a.g2:
        try:
            cr = s.correlation_result()
        except PulsedQFCError as exc:
            raise type(exc)(f"{name}: g2 analysis: {exc}") from exc
        g2 = cr.summary()
        # satellite ratio with the flat inter-peak level removed from both areas
        nwin = 2 * cr.window_bins + 1
        if cr.satellite_areas and math.isfinite(cr.interpeak_per_bin):
            flat = cr.interpeak_per_bin * nwin
            sat = float(np.mean(list(cr.satellite_areas.values()))) - flat
            main = cr.normalization - flat
            ratio = sat / main if main > 0 and sat > 0 else math.nan
            sig_sat = math.sqrt(sum(cr.satellite_areas.values())) / len(cr.satellite_areas)
            sig_main = math.sqrt(sum(cr.side_areas.values())) / len(cr.side_areas)
            g2["satellite_ratio_bg_subtracted"] = ratio
            g2["satellite_ratio_bg_subtracted_err"] = ratio * math.hypot(sig_sat / sat, sig_main / main) \
                if math.isfinite(ratio) else math.nan
        g2["predicted_g2_zero"] = r.prediction.g2_zero
        g2["predicted_satellite_ratio"] = r.prediction.satellite_ratio
        out["g2"] = g2
    h = s.tcspc
    if a.fwhm:
        try:
            w, w_err = analysis.estimate_fwhm(_sub_histogram(h, a.fwhm_window_ps))
        except PulsedQFCError as exc:
            raise type(exc)(f"{name}: FWHM estimate: {exc}") from exc
        pred = None
        if not r.cw:
            jit = cfg.detectors[0].jitter_fwhm
            pred = analysis.predicted_converted_fwhm(r.train.fwhm, jit)
        out["fwhm"] = {"value_ps": w, "err_ps": w_err, "predicted_closed_form_ps": pred}
    if a.lifetime_window_ps is not None:
        try:
            fit = analysis.fit_lifetime(h, a.lifetime_window_ps,
                                        background_window=a.lifetime_background_window_ps)
        except PulsedQFCError as exc:
            raise type(exc)(f"{name}: lifetime fit: {exc}") from exc
        out["lifetime"] = {"value_ps": fit.lifetime, "err_ps": fit.lifetime_err, "fit": fit.to_dict()}
    return out


def run_shard(cfg: ScenarioConfig, shard: int, resolved: ResolvedScenario | None = None) -> RunSummary:
    """Simulate one shard: a contiguous block of triggers, in chunks."""
    if not 0 <= shard < cfg.shards:
        raise ConfigError(f"shard index {shard} outside [0, {cfg.shards})")
    t0 = time.perf_counter()
    res = resolved if resolved is not None else resolve(cfg)
    a = cfg.analysis
    n_total = cfg.timing.n_triggers
    k_lo = n_total * shard // cfg.shards
    k_hi = n_total * (shard + 1) // cfg.shards
    nb = tcspc_bins(res.sync_period, a.tcspc_bin_ps)
    m = delay_bins(a.g2_max_delay_ps, a.g2_bin_ps)
    ca = np.zeros(nb, np.int64)
    cb = np.zeros(nb, np.int64)
    corr = np.zeros(2 * m + 1, np.int64)
    counters: dict[str, int] = {}
    head = tail = None
    for i, k0 in enumerate(range(k_lo, k_hi, cfg.chunk_triggers)):
        k1 = min(k0 + cfg.chunk_triggers, k_hi)
        tally = _simulate_chunk(res, k0, k1, _rngs(cfg.seed, shard, i))
        ca += tally.tcspc_a
        cb += tally.tcspc_b
        corr += tally.corr
        for k, v in tally.counters.items():
            counters[k] = counters.get(k, 0) + v
        if tail is not None and a.g2:
            corr += _seam(tail, tally.head, a.g2_max_delay_ps, a.g2_bin_ps)
        if head is None:
            head = tally.head
        tail = tally.tail
    if head is None:
        empty = (np.empty(0), np.empty(0))
        head = tail = empty
        counters = {k: 0 for k in ("triggers", "collected_gated", "converted_gated", "collected_ungated",
                                   "converted_ungated", "raman", "detected_a", "detected_b")}
    meta = {"sync_period_ps": res.sync_period}
    off = a.tcspc_offset_ps
    s = RunSummary(res, cfg.seed, (shard,), (k_lo, k_hi), counters,
                   Histogram(off, a.tcspc_bin_ps, ca, meta), Histogram(off, a.tcspc_bin_ps, cb, meta),
                   delay_histogram(corr, a.g2_bin_ps), _head=head, _tail=tail)
    s.wall_clock_s = time.perf_counter() - t0
    return s


def merge_shards(summaries: Sequence[RunSummary]) -> RunSummary:
    """Combine shard summaries of one scenario.

    Shards must be contiguous in trigger space once sorted; pairs across each
    internal boundary are added from the stored edge tags.  The order of the
    inputs does not matter, and merging partial merges gives the same result.
    """
    if not summaries:
        raise ConfigMismatch("nothing to merge")
    parts = sorted(summaries, key=lambda s: s.trigger_range[0])
    first = parts[0]
    fp = first.cfg.fingerprint()
    for p in parts[1:]:
        if not p.tcspc_a.compatible(first.tcspc_a) or not p.correlation.compatible(first.correlation):
            raise ConfigMismatch("shards have different histogram binning")
        if p.cfg.fingerprint() != fp or p.seed != first.seed:
            raise ConfigMismatch("shards come from different scenario configurations")
    for prev, nxt in zip(parts[:-1], parts[1:]):
        if prev.trigger_range[1] != nxt.trigger_range[0]:
            raise ConfigMismatch(f"shards are not contiguous: {prev.trigger_range} then {nxt.trigger_range}")
    a = first.cfg.analysis
    ca, cb, corr = first.tcspc_a, first.tcspc_b, first.correlation.counts.copy()
    counters = dict(first.counters)
    for prev, nxt in zip(parts[:-1], parts[1:]):
        ca, cb = ca + nxt.tcspc_a, cb + nxt.tcspc_b
        corr += nxt.correlation.counts
        if a.g2:
            corr += _seam(prev._tail, nxt._head, a.g2_max_delay_ps, a.g2_bin_ps)
        for k, v in nxt.counters.items():
            counters[k] = counters.get(k, 0) + v
    shards = tuple(sorted(i for p in parts for i in p.shards))
    out = RunSummary(first.resolved, first.seed, shards,
                     (parts[0].trigger_range[0], parts[-1].trigger_range[1]), counters, ca, cb,
                     delay_histogram(corr, a.g2_bin_ps), _head=parts[0]._head, _tail=parts[-1]._tail)
    out.wall_clock_s = sum(p.wall_clock_s for p in parts)
    if out.trigger_range == (0, first.cfg.timing.n_triggers):
        out.stats = compute_statistics(out)
    return out


def _shard_job(args):
    cfg, shard, res = args
    return run_shard(cfg, shard, res)


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> RunSummary:
    """Run every shard of ``cfg`` and merge.  ``workers`` never changes the result."""
    t0 = time.perf_counter()
    res = resolve(cfg)
    jobs = [(cfg, i, res) for i in range(cfg.shards)]
    if workers > 1 and cfg.shards > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.shards)) as ex:
            parts = list(ex.map(_shard_job, jobs))
    else:
        parts = [_shard_job(j) for j in jobs]
    out = merge_shards(parts)
    out.wall_clock_s = time.perf_counter() - t0
    return out


# -- sweeps --------------------------------------------------------------------------

SWEEP_PARAMETERS = ("tau_mod", "delta_t")


@dataclass(eq=False)
class SweepResult:
    parameter: str
    values: list[float]
    runs: list[RunSummary]
    backgrounds: list[RunSummary | None]
    fit: analysis.FitResult | None = None

    def rows(self) -> list[dict]:
        out = []
        for v, s, b in zip(self.values, self.runs, self.backgrounds):
            st = s.stats
            row = {"value_ps": v, "pump_delay_ps": s.resolved.train.delay,
                   "net_efficiency": st["net_efficiency"],
                   "mc_efficiency": st["mc_efficiency"]["value"],
                   "mc_efficiency_err": st["mc_efficiency"]["err"],
                   "rate_per_s": st["rates_per_s"]["converted_analytic"],
                   "fwhm_ps": st.get("fwhm", {}).get("value_ps", math.nan)}
            h = net_histogram(s, b)
            row["peak_height"] = analysis.smoothed_peak(h)[0]
            out.append(row)
        return out

    def to_dict(self) -> dict:
        d = {"parameter": self.parameter, "values_ps": list(self.values), "points": self.rows()}
        if self.fit is not None:
            d["lifetime_fit"] = self.fit.to_dict()
        return _clean(d)


def net_histogram(run: RunSummary, background: RunSummary | None) -> Histogram:
    """TCSPC histogram of a run minus its pump-only background run, if any."""
    h = run.tcspc
    if background is None:
        return h
    return Histogram(h.start, h.bin_width, h.counts - background.tcspc.counts, h.meta)


def sweep(cfg: ScenarioConfig, parameter: str, values: Sequence[float] | None = None,
          workers: int = 1) -> SweepResult:
    """One run per value with seed_i derived from (seed, "sweep", i).

    ``tau_mod`` varies the pump FWHM (optimal delay unless the scenario fixes
    it).  ``delta_t`` varies the pump delay, measured from the optimal delay
    or from the trigger per ``sweep.delay_reference``; with
    ``sweep.subtract_background`` each point also gets a pump-only run
    (no photons) whose histogram is subtracted before peak heights are taken.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")
    if values is None:
        values = cfg.sweep.width_values_ps if parameter == "tau_mod" else cfg.sweep.delay_values_ps
    values = [float(v) for v in values]
    result = SweepResult(parameter, values, [], [])
    if not values:
        return result
    if cfg.pump.mode == "cw":
        raise ConfigError("sweeps need a pulsed pump")
    points = []
    if parameter == "tau_mod":
        for i, v in enumerate(values):
            if v < cfg.conversion.qpm_min_pulse_fwhm:
                raise QpmViolation(f"sweep point {i}: pump FWHM {v:g} ps is below the QPM minimum of "
                                   f"{cfg.conversion.qpm_min_pulse_fwhm:g} ps")
            points.append(replace(cfg, timing=replace(cfg.timing, pulse_fwhm=v),
                                  pump=replace(cfg.pump, fwhm_ps=v)))
    else:
        base = 0.0
        if cfg.sweep.delay_reference == "optimal":
            base = resolve(replace(cfg, pump=replace(cfg.pump, delay="optimal"),
                                   calibration=replace(cfg.calibration, multiphoton_g2=None))).train.delay
        for v in values:
            d = base + v
            points.append(replace(cfg, timing=replace(cfg.timing, delay=d), pump=replace(cfg.pump, delay=d)))
    for i, p in enumerate(points):
        pc = replace(p, seed=derived_seed(cfg.seed, "sweep", i))
        result.runs.append(run_scenario(pc, workers))
        if parameter == "delta_t" and cfg.sweep.subtract_background:
            bc = replace(pc, seed=derived_seed(cfg.seed, "sweep-background", i),
                         source=replace(pc.source, collection_efficiency=0.0),
                         calibration=replace(pc.calibration, multiphoton_g2=None),
                         analysis=replace(pc.analysis, fwhm=False, g2=False, lifetime_window_ps=None))
            result.backgrounds.append(run_scenario(bc, workers))
        else:
            result.backgrounds.append(None)
    if parameter == "delta_t" and len(values) >= 4:
        hists = [(v, net_histogram(s, b)) for v, s, b in zip(values, result.runs, result.backgrounds)]
        result.fit = analysis.delay_sweep_peaks(hists)
    return result


def write_sweep_curve(result: SweepResult, path: str | Path) -> None:
    cols = ["value_ps", "pump_delay_ps", "net_efficiency", "mc_efficiency", "mc_efficiency_err",
            "rate_per_s", "fwhm_ps", "peak_height"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([("tau_mod_ps" if result.parameter == "tau_mod" else "delta_t_ps")] + cols[1:])
        for row in result.rows():
            w.writerow([f"{row[c]:.10g}" for c in cols])


# -- output --------------------------------------------------------------------------

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_run(summary: RunSummary, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """Write ``summary.json`` and the histogram files.

    With ``fmt="json"`` the histograms are embedded in ``summary.json``
    instead of being written as CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = summary.to_dict()
    written = []
    if fmt == "json":
        d["histograms"]["tcspc"]["counts_a"] = summary.tcspc_a.counts.tolist()
        d["histograms"]["tcspc"]["counts_b"] = summary.tcspc_b.counts.tolist()
        d["histograms"]["correlation"]["counts"] = summary.correlation.counts.tolist()
        for k in ("tcspc", "tcspc_a", "tcspc_b", "correlation"):
            d["histograms"][k].pop("file", None)
    elif fmt == "csv":
        summary.tcspc.to_csv(out / "histogram_tcspc.csv")
        summary.tcspc_a.to_csv(out / "histogram_tcspc_a.csv")
        summary.tcspc_b.to_csv(out / "histogram_tcspc_b.csv")
        written += [out / "histogram_tcspc.csv", out / "histogram_tcspc_a.csv", out / "histogram_tcspc_b.csv"]
        if summary.cfg.analysis.g2:
            summary.correlation_result().to_csv(out / "g2.csv")
            written.append(out / "g2.csv")
    else:
        raise ConfigError(f"unknown output format {fmt!r}; expected 'csv' or 'json'")
    _dump_json(d, out / "summary.json")
    written.append(out / "summary.json")
    return written


def write_sweep(result: SweepResult, out_dir: str | Path, fmt: str = "csv") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (s, b) in enumerate(zip(result.runs, result.backgrounds)):
        write_run(s, out / f"point_{i:03d}", fmt)
        if b is not None:
            write_run(b, out / f"point_{i:03d}" / "background", fmt)
    write_sweep_curve(result, out / "sweep_curve.csv")
    _dump_json(result.to_dict(), out / "sweep_summary.json")


def log_wall_clock(label: str, seconds: float) -> None:
    print(f"{label}: wall clock {seconds:.2f} s", file=sys.stderr)
