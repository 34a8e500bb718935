"""Estimators on histograms and closed-form cross-checks for the simulator.

The closed-form pieces (``analytic_g2_zero``, ``predicted_converted_fwhm``
and the HBT slot model) are written independently of the Monte-Carlo chain so
they can serve as oracles for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import (BothZero, InsufficientCounts, InsufficientPoints, Multimodal, NoPeak,
                     NonDecaying)
from .detection import DetectorModel, Histogram
from .conversion import ConversionModel, PhotonSource, expected_raman_counts, net_efficiency
from .timing import PumpPulseTrain

BACKGROUND_FRACTION = 0.1
SMOOTH_BINS = 3


@dataclass
class FitResult:
    params: dict[str, float]
    errors: dict[str, float]
    reduced_chi2: float
    window: tuple[float, float]
    n_points: int
    meta: dict = field(default_factory=dict)

    @property
    def lifetime(self) -> float:
        return self.params["lifetime"]

    @property
    def lifetime_err(self) -> float:
        return self.errors["lifetime"]

    def to_dict(self) -> dict:
        return {"params": dict(self.params), "errors": dict(self.errors),
                "reduced_chi2": self.reduced_chi2, "window_ps": list(self.window),
                "n_points": self.n_points, **self.meta}


def outer_background(counts: np.ndarray, fraction: float = BACKGROUND_FRACTION) -> float:
    """Median of the outermost ``fraction`` of bins, split between both ends."""
    n = max(1, int(round(0.5 * fraction * counts.size)))
    return float(np.median(np.concatenate([counts[:n], counts[-n:]])))


def estimate_fwhm(h: Histogram, background_fraction: float = BACKGROUND_FRACTION,
                  max_gap_bins: int = 2) -> tuple[float, float]:
    """Background-subtracted FWHM of a single peak and its uncertainty (one bin).

    Half-maximum crossings are located by linear interpolation between bin
    centres.  Excursions above half maximum separated from the main peak by
    more than ``max_gap_bins`` bins count as a second peak.
    """
    y = h.counts.astype(float) - outer_background(h.counts, background_fraction)
    x = h.centers
    i = int(np.argmax(y))
    peak = y[i]
    if not peak > 0 or peak < 3.0 * math.sqrt(max(h.counts[i], 1)):
        raise NoPeak("no peak stands above the background")
    half = 0.5 * peak
    above = y >= half
    left = i
    while left > 0 and (above[left - 1] or _bridged(above, left - 1, -1, max_gap_bins)):
        left -= 1
    right = i
    while right < y.size - 1 and (above[right + 1] or _bridged(above, right + 1, +1, max_gap_bins)):
        right += 1
    outside = above.copy()
    outside[left:right + 1] = False
    if outside.any():
        raise Multimodal("a second region rises above half maximum")
    if left == 0 or right == y.size - 1:
        raise NoPeak("peak is not contained in the histogram")
    tl = np.interp(half, [y[left - 1], y[left]], [x[left - 1], x[left]])
    tr = np.interp(half, [y[right + 1], y[right]], [x[right + 1], x[right]])
    return float(tr - tl), float(h.bin_width)


def _bridged(above: np.ndarray, j: int, direction: int, gap: int) -> bool:
    # True if an above-half bin lies within `gap` bins beyond j (so j sits in a noise dip)
    for k in range(1, gap + 1):
        idx = j + direction * k
        if 0 <= idx < above.size and above[idx]:
            return True
    return False


def _weighted_line(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted least-squares line; returns (slope, intercept, cov, chi2)."""
    X = np.column_stack([x, np.ones_like(x)])
    A = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(A)
    coef = cov @ (X.T @ (w * y))
    resid = y - X @ coef
    chi2 = float(np.sum(w * resid * resid))
    return float(coef[0]), float(coef[1]), cov, chi2


def fit_lifetime(h: Histogram, window: tuple[float, float], background: float | None = None,
                 background_window: tuple[float, float] | None = None) -> FitResult:
    """Lifetime from a log-linear weighted fit of the decay tail.

    The background is the median of the bins in ``background_window``
    (default: the first 10 % of the histogram, which should precede the
    onset).  Weights are the background-subtracted counts, the inverse
    variance of ``log(counts)`` under Poisson statistics.
    """
    x = h.centers
    counts = h.counts.astype(float)
    if background is None:
        if background_window is None:
            n = max(1, int(round(BACKGROUND_FRACTION * counts.size)))
            bg_sel = np.zeros(counts.size, bool)
            bg_sel[:n] = True
        else:
            bg_sel = (x >= background_window[0]) & (x < background_window[1])
        background = float(np.median(counts[bg_sel])) if bg_sel.any() else 0.0
    lo, hi = window
    sel = (x >= lo) & (x <= hi)
    net = counts[sel] - background
    if net.size == 0 or net.sum() < 3.0 * math.sqrt(max(counts[sel].sum(), 1.0)):
        raise InsufficientCounts("no significant signal above background in the fit window")
    good = net > 0
    xs, ys, ws = x[sel][good], np.log(net[good]), net[good]
    decades = (ys.max() - ys.min()) / math.log(10)
    if xs.size < 3 or (xs.size < 20 and decades < 2):
        raise InsufficientCounts(f"{xs.size} usable bins spanning {decades:.2f} decades")
    slope, intercept, cov, chi2 = _weighted_line(xs, ys, ws)
    if not slope < 0:
        raise InsufficientCounts("fitted tail does not decay")
    tau = -1.0 / slope
    tau_err = math.sqrt(cov[0, 0]) / slope ** 2
    dof = max(xs.size - 2, 1)
    return FitResult({"lifetime": tau, "amplitude": math.exp(intercept), "background": background},
                     {"lifetime": tau_err, "amplitude": math.exp(intercept) * math.sqrt(cov[1, 1]),
                      "background": math.sqrt(max(background, 0.0))},
                     chi2 / dof, (float(lo), float(hi)), int(xs.size))


def smoothed_peak(h: Histogram, width: int = SMOOTH_BINS) -> tuple[float, float]:
    """Maximum of a ``width``-bin moving average and the time of that maximum."""
    kernel = np.ones(width) / width
    s = np.convolve(h.counts.astype(float), kernel, mode="valid")
    i = int(np.argmax(s))
    return float(s[i]), float(h.centers[i + width // 2])


def delay_sweep_peaks(histograms: Sequence[tuple[float, Histogram]], smooth: int = SMOOTH_BINS) -> FitResult:
    """Lifetime from the decay of peak heights against pump delay."""
    if len(histograms) < 4:
        raise InsufficientPoints(f"need at least 4 delays, got {len(histograms)}")
    delays = np.array([d for d, _ in histograms], dtype=float)
    heights = np.array([smoothed_peak(h, smooth)[0] for _, h in histograms])
    if np.any(heights <= 0):
        raise InsufficientCounts("a delay setting produced an empty histogram")
    y = np.log(heights)
    # var(log h) = 1 / (smooth * h) for a mean over `smooth` Poisson bins
    w = smooth * heights
    slope, intercept, cov, chi2 = _weighted_line(delays, y, w)
    span = float(np.ptp(delays))
    if not slope < 0 or -1.0 / slope > 1e3 * max(span, 1.0):
        raise NonDecaying("peak heights do not decay with delay")
    tau = -1.0 / slope
    return FitResult({"lifetime": tau, "amplitude": math.exp(intercept)},
                     {"lifetime": math.sqrt(cov[0, 0]) / slope ** 2,
                      "amplitude": math.exp(intercept) * math.sqrt(cov[1, 1])},
                     chi2 / max(delays.size - 2, 1), (float(delays.min()), float(delays.max())),
                     int(delays.size), {"heights": heights.tolist(), "delays_ps": delays.tolist()})


def analytic_g2_zero(signal_rate: float, background_rate: float) -> float:
    """g2(0) of an ideal single-photon signal on an uncorrelated background: 1 - rho^2."""
    if signal_rate < 0 or background_rate < 0:
        raise ValueError("rates must be >= 0")
    if signal_rate == 0 and background_rate == 0:
        raise BothZero("signal and background rates are both zero")
    rho = signal_rate / (signal_rate + background_rate)
    return 1.0 - rho * rho


def rho_for_g2(g2_zero: float) -> float:
    """Signal fraction giving ``g2_zero`` under the background model."""
    if not 0.0 <= g2_zero <= 1.0:
        raise ValueError("g2_zero must lie in [0, 1]")
    return math.sqrt(1.0 - g2_zero)


def predicted_converted_fwhm(tau_mod: float, jitter_fwhm: float, saturated: bool = True) -> float:
    """Observed FWHM of a pump-shaped photon: saturation broadening plus detector jitter."""
    if tau_mod < 0 or jitter_fwhm < 0:
        raise ValueError("inputs must be >= 0")
    base = math.sqrt(2.0) * tau_mod if saturated else tau_mod
    return math.hypot(base, jitter_fwhm)


# -- HBT slot model ----------------------------------------------------------------

@dataclass(frozen=True)
class SlotMeans:
    """Mean detected events per arm for one excitation slot.

    ``signal`` is the single-photon part, ``pair`` the mean number of A-B
    pairs from two photons of the same trigger, ``local`` background
    localised at the pump pulse and ``uniform`` background spread evenly
    over the slot.
    """

    signal: float
    pair: float
    local: float
    uniform: float

    @property
    def total(self) -> float:
        return self.signal + self.local + self.uniform


@dataclass(frozen=True)
class HbtPrediction:
    g2_zero: float
    satellite_ratio: float
    side_area_per_trigger: float
    slots: tuple[SlotMeans, ...]
    window_fraction: float


def slot_means(source: PhotonSource, train: PumpPulseTrain, model: ConversionModel,
               detector: DetectorModel, excitation_period: float, pump_divider: int) -> tuple[SlotMeans, ...]:
    """Per-arm means for each trigger position within one pump period.

    Slot 0 carries the pump gate (for a CW pump every slot is alike).
    Photon conversion uses the quadrature net efficiency of a wavepacket
    launched at the slot's trigger.
    """
    c = source.collection_efficiency
    e, p = source.emission_prob_per_pulse, source.multiphoton_prob
    eta_d = detector.efficiency
    n_slots = 1 if train.cw else pump_divider
    dark = detector.dark_rate * excitation_period * 1e-12
    out = []
    for k in range(n_slots):
        t0 = k * excitation_period
        eff = net_efficiency(source.wavepacket(t0), train, model)
        photons = c * (e + p) * eff * eta_d
        pair = e * p * (c * eff * eta_d) ** 2 / 2.0
        raman = expected_raman_counts(train, model, t0 - 0.5 * excitation_period, t0 + 0.5 * excitation_period)
        floor = model.raman_coeff * train.off_level * excitation_period * 1e-12
        local = max(raman - floor, 0.0)
        out.append(SlotMeans(photons / 2.0, pair, eta_d * local / 2.0, eta_d * floor / 2.0 + dark))
    return tuple(out)


def hbt_prediction(slots: Sequence[SlotMeans], window_fraction: float = 1.0) -> HbtPrediction:
    """Expected g2(0) and satellite/main area ratio from slot means.

    ``window_fraction`` is the peak integration window divided by the
    excitation period; it scales every term involving the uniform
    background, which is spread over all delays.
    """
    n = len(slots)

    def cross(x: SlotMeans, y: SlotMeans) -> float:
        loc_x, loc_y = x.signal + x.local, y.signal + y.local
        return loc_x * loc_y + window_fraction * (loc_x * y.uniform + x.uniform * loc_y
                                                  + x.uniform * y.uniform)

    # within one slot the single-photon signal cannot pair with itself
    zero = np.mean([s.pair + cross(s, s) - s.signal ** 2 for s in slots])
    side = np.mean([cross(s, s) for s in slots])
    if n > 1:
        sat = np.mean([cross(slots[k], slots[(k + 1) % n]) for k in range(n)])
        ratio = float(sat / side)
    else:
        ratio = math.nan
    return HbtPrediction(float(zero / side), ratio, float(side), tuple(slots), window_fraction)


def calibrate_raman_coeff(rho: float, source: PhotonSource, train: PumpPulseTrain, model: ConversionModel,
                          detector: DetectorModel, excitation_period: float) -> float:
    """Raman coefficient giving signal fraction ``rho`` for a CW pump.

    Dark counts are part of the uncorrelated background, so they are counted
    against the target.
    """
    if not train.cw:
        raise ValueError("Raman calibration is defined against a CW pump")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    base = replace(model, raman_coeff=0.0)
    s = slot_means(source, train, base, detector, excitation_period, 1)[0]
    needed = s.signal * (1.0 / rho - 1.0) - s.uniform
    if needed < 0:
        raise ValueError("dark counts alone exceed the background budget")
    per_coeff = detector.efficiency * train.peak_power * excitation_period * 1e-12 / 2.0
    return needed / per_coeff


def calibrate_multiphoton(target_g2: float, source: PhotonSource, train: PumpPulseTrain,
                          model: ConversionModel, detector: DetectorModel, excitation_period: float,
                          pump_divider: int, window_fraction: float = 1.0) -> float:
    """Multiphoton probability giving ``target_g2`` under the slot model."""
    def g2_of(p: float) -> float:
        src = replace(source, multiphoton_prob=p)
        slots = slot_means(src, train, model, detector, excitation_period, pump_divider)
        return hbt_prediction(slots, window_fraction).g2_zero - target_g2

    lo, hi = g2_of(0.0), g2_of(1.0)
    if lo > 0 or hi < 0:
        raise ValueError(f"target g2(0)={target_g2} is outside the reachable range")
    return float(optimize.brentq(g2_of, 0.0, 1.0, xtol=1e-12))
