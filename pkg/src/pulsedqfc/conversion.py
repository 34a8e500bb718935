"""Quasi-phase-matched sum-frequency conversion of single photons.

The converter is described by a saturating conversion law

    eta(P) = eta_max * sin^2( (pi/2) * sqrt(min(P, p_sat) / p_sat) )

applied instantaneously to the pump power seen by the photon.  Shaping of the
converted wavepacket therefore follows the pump, with a saturation broadening
that reaches sqrt(2) for a Gaussian pump peaking at ``p_sat``.  Pump-induced
anti-Stokes Raman photons enter as an inhomogeneous Poisson background with
rate ``raman_coeff * P(t)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .detection import TimeTagStream
from .errors import ConfigError, QpmViolation, ZeroOverlap
from .timing import PumpPulseTrain, pump_power
from .waveform import DEFAULT_STEP_PS, ExponentialDecay, Sampled, TemporalProfile

ZERO_OVERLAP_EFF = 1e-12


@dataclass(frozen=True)
class ConversionModel:
    """Converter parameters.

    ``raman_coeff`` is the converted Raman photon rate per mW of pump, in
    counts/s/mW, referred to the converter output (before detection).
    """

    eta_max: float = 0.75
    p_sat: float = 85.0
    qpm_min_pulse_fwhm: float = 10.0
    raman_coeff: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta_max <= 1.0:
            raise ConfigError("eta_max must lie in [0, 1]")
        if not self.p_sat > 0:
            raise ConfigError("p_sat must be > 0")
        if not self.qpm_min_pulse_fwhm > 0:
            raise ConfigError("qpm_min_pulse_fwhm must be > 0")
        if not self.raman_coeff >= 0:
            raise ConfigError("raman_coeff must be >= 0")


@dataclass(frozen=True)
class PhotonSource:
    """Triggered single-photon emitter.

    ``coherence_time`` is carried as metadata only; no coherence physics is
    simulated.
    """

    lifetime: float = 1500.0
    collection_efficiency: float = 0.001
    emission_prob_per_pulse: float = 1.0
    multiphoton_prob: float = 0.0
    coherence_time: float = 280.0

    def __post_init__(self):
        if not self.lifetime > 0:
            raise ConfigError("lifetime must be > 0")
        for name in ("collection_efficiency", "emission_prob_per_pulse", "multiphoton_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")

    def wavepacket(self, onset: float = 0.0) -> ExponentialDecay:
        """Normalised detection-time density of a photon emitted from a trigger at ``onset``."""
        return ExponentialDecay(onset, self.lifetime).normalize()


class EfficiencyPoint(NamedTuple):
    tau_mod_ps: float
    efficiency: float
    rate_per_s: float
    delay_ps: float


def conversion_probability(power, model: ConversionModel):
    """Single-photon conversion probability at pump power ``power`` (mW)."""
    p = np.asarray(power, dtype=float)
    u = np.sqrt(np.clip(p, 0.0, model.p_sat) / model.p_sat)
    out = model.eta_max * np.sin(0.5 * math.pi * u) ** 2
    return float(out) if out.ndim == 0 else out


def check_qpm(train: PumpPulseTrain, model: ConversionModel) -> None:
    """Raise ``QpmViolation`` if the pulse is shorter than the QPM acceptance allows."""
    if train.cw:
        return
    width = train.fwhm
    if width < model.qpm_min_pulse_fwhm:
        raise QpmViolation(
            f"pump FWHM {width:g} ps is below the QPM minimum of {model.qpm_min_pulse_fwhm:g} ps")


def _grid(photon: TemporalProfile, step: float) -> np.ndarray:
    if isinstance(photon, Sampled) and step == photon.step:
        return photon.times
    lo, hi = photon.support()
    n = int(math.floor((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


def converted_density(photon: TemporalProfile, train: PumpPulseTrain, model: ConversionModel,
                      step: float = DEFAULT_STEP_PS) -> tuple[np.ndarray, np.ndarray]:
    """Grid and unnormalised converted density ``eta(P(t)) * photon(t)``."""
    t = _grid(photon, step)
    return t, conversion_probability(pump_power(train, t), model) * photon(t)


def net_efficiency(photon: TemporalProfile, train: PumpPulseTrain, model: ConversionModel,
                   step: float = DEFAULT_STEP_PS) -> float:
    """Fraction of photons converted (trapezoidal quadrature on a ``step`` grid)."""
    if train.cw:
        return conversion_probability(train.peak_power, model) * photon.integral()
    t, w = converted_density(photon, train, model, step)
    return float(np.trapezoid(w, t))


def converted_profile(photon: TemporalProfile, train: PumpPulseTrain, model: ConversionModel,
                      step: float = DEFAULT_STEP_PS) -> tuple[TemporalProfile, float]:
    """Converted wavepacket (normalised) and the net conversion efficiency."""
    check_qpm(train, model)
    if train.cw:
        eff = conversion_probability(train.peak_power, model) * photon.integral()
        if eff < ZERO_OVERLAP_EFF:
            raise ZeroOverlap(f"net efficiency {eff:.3g} is below {ZERO_OVERLAP_EFF:g}")
        return photon, eff
    t, w = converted_density(photon, train, model, step)
    eff = float(np.trapezoid(w, t))
    if eff < ZERO_OVERLAP_EFF:
        raise ZeroOverlap(f"net efficiency {eff:.3g} is below {ZERO_OVERLAP_EFF:g}")
    return Sampled(float(t[0]), step, w / eff, semantics="density"), eff


def optimal_delay(photon: TemporalProfile, train: PumpPulseTrain, model: ConversionModel,
                  step: float = DEFAULT_STEP_PS) -> tuple[float, float]:
    """Pump delay maximising the net efficiency, and that efficiency.

    A coarse scan brackets the optimum, bounded Brent refines it.
    """
    if train.cw:
        return train.delay, net_efficiency(photon, train, model, step)
    width = train.fwhm
    peak = photon.peak_time()
    lo, hi = peak - 2.0 * width, peak + 4.0 * _spread(photon) + width
    scan = np.linspace(lo, hi, 81)
    effs = [net_efficiency(photon, train.with_delay(d), model, step) for d in scan]
    i = int(np.argmax(effs))
    a, b = scan[max(i - 1, 0)], scan[min(i + 1, scan.size - 1)]
    res = optimize.minimize_scalar(lambda d: -net_efficiency(photon, train.with_delay(d), model, step),
                                   bounds=(a, b), method="bounded", options={"xatol": 1e-3})
    best_d, best_e = float(res.x), -float(res.fun)
    if effs[i] > best_e:
        best_d, best_e = float(scan[i]), float(effs[i])
    return best_d, best_e


def _spread(photon: TemporalProfile) -> float:
    # one-sided width scale used only to bound the delay search
    if isinstance(photon, ExponentialDecay):
        return photon.lifetime
    try:
        return max(photon.fwhm(), 1.0)
    except Exception:
        lo, hi = photon.support()
        return hi - lo


def net_efficiency_curve(fwhm_list: Sequence[float], photon: TemporalProfile, train_template: PumpPulseTrain,
                         model: ConversionModel, excitation_rate: float = 50e6,
                         collection_efficiency: float = 0.001,
                         step: float = DEFAULT_STEP_PS) -> list[EfficiencyPoint]:
    """Optimal-delay net efficiency and converted photon rate for each pump FWHM.

    ``rate = excitation_rate * collection_efficiency * efficiency`` (s^-1).
    """
    points = []
    for width in fwhm_list:
        if width < model.qpm_min_pulse_fwhm:
            raise QpmViolation(
                f"pump FWHM {width:g} ps is below the QPM minimum of {model.qpm_min_pulse_fwhm:g} ps")
        train = train_template.with_fwhm(width)
        d, eff = optimal_delay(photon, train, model, step)
        points.append(EfficiencyPoint(float(width), eff, excitation_rate * collection_efficiency * eff, d))
    return points


def write_efficiency_csv(points: Sequence[EfficiencyPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_mod_ps", "efficiency", "rate_per_s"])
        for p in points:
            w.writerow([f"{p.tau_mod_ps:.6g}", f"{p.efficiency:.10f}", f"{p.rate_per_s:.6f}"])


def conversion_mask(times, train: PumpPulseTrain, model: ConversionModel,
                    rng: np.random.Generator) -> np.ndarray:
    """Bernoulli outcome of the conversion attempt for each photon time."""
    p = conversion_probability(pump_power(train, times), model)
    return rng.random(np.shape(p)) < p


def attempt_conversion(photon_time: float, train: PumpPulseTrain, model: ConversionModel,
                       rng: np.random.Generator) -> float | None:
    """Converted photon time (unchanged) on success, ``None`` on failure."""
    return float(photon_time) if bool(conversion_mask(photon_time, train, model, rng)) else None


def raman_rate(train: PumpPulseTrain, model: ConversionModel, t):
    """Instantaneous converted Raman rate in counts/s."""
    return model.raman_coeff * pump_power(train, t)


def expected_raman_counts(train: PumpPulseTrain, model: ConversionModel, t0: float, t1: float,
                          step: float = DEFAULT_STEP_PS) -> float:
    """Mean number of Raman events in [t0, t1) by quadrature of the rate."""
    if model.raman_coeff == 0 or t1 <= t0:
        return 0.0
    if train.cw:
        return model.raman_coeff * train.peak_power * (t1 - t0) * 1e-12
    # whole pump periods contribute identically; integrate one and the remainder
    whole = math.floor((t1 - t0) / train.period)
    total = 0.0
    if whole:
        total += whole * _rate_integral(train, model, t0, t0 + train.period, step)
    return total + _rate_integral(train, model, t0 + whole * train.period, t1, step)


def _rate_integral(train, model, t0, t1, step) -> float:
    if t1 <= t0:
        return 0.0
    n = int(math.ceil((t1 - t0) / step)) + 1
    t = np.linspace(t0, t1, n)
    return float(np.trapezoid(raman_rate(train, model, t), t)) * 1e-12


def raman_times(train: PumpPulseTrain, model: ConversionModel, t0: float, t1: float,
                rng: np.random.Generator) -> np.ndarray:
    """Sorted Raman event times in [t0, t1) by thinning a homogeneous process."""
    if model.raman_coeff == 0 or t1 <= t0:
        return np.empty(0)
    lam_max = model.raman_coeff * train.peak_power * 1e-12
    n = rng.poisson(lam_max * (t1 - t0))
    t = np.sort(rng.uniform(t0, t1, n))
    if train.cw:
        return t
    keep = rng.random(n) * train.peak_power < pump_power(train, t)
    return t[keep]


def raman_events(train: PumpPulseTrain, model: ConversionModel, duration: float,
                 rng: np.random.Generator, channel: int = 0) -> TimeTagStream:
    if not duration > 0:
        raise ConfigError("duration must be > 0")
    t = raman_times(train, model, 0.0, duration, rng)
    return TimeTagStream(t, np.full(t.size, channel, dtype=np.int8), duration)
