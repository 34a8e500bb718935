"""Experiment timeline: excitation triggers, pump gates and the pump power P(t).

Conventions: times in ps, powers in mW.  Excitation triggers sit at
``k * excitation_period``; the pump fires on every ``pump_divider``-th trigger
(k = 0, divider, 2*divider, ...).  A delay of zero puts the pump pulse centre
on the trigger, i.e. on the onset of the photon wavepacket; positive delays
move the pump later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .waveform import DEFAULT_EDGE_FWHM_PS, FlatTop, Gaussian, TemporalProfile

PUMP_SHAPES = ("gaussian", "flattop")


@dataclass(frozen=True)
class TimingConfig:
    """Repetition and pulse settings.

    ``pulse_fwhm=None`` selects a CW pump.
    """

    excitation_period: float = 20000.0
    pump_divider: int = 2
    delay: float = 0.0
    pulse_fwhm: float | None = 260.0
    sim_duration: float = 1.0e12

    def __post_init__(self):
        if not self.excitation_period > 0:
            raise ConfigError("excitation_period must be > 0")
        if int(self.pump_divider) != self.pump_divider or self.pump_divider < 1:
            raise ConfigError("pump_divider must be a positive integer")
        if not self.sim_duration > 0:
            raise ConfigError("sim_duration must be > 0")
        if self.pulse_fwhm is not None and not self.pulse_fwhm > 0:
            raise ConfigError("pulse_fwhm must be > 0 (or None for CW)")

    @property
    def cw(self) -> bool:
        return self.pulse_fwhm is None

    @property
    def pump_period(self) -> float:
        return self.excitation_period * self.pump_divider

    @property
    def excitation_rate(self) -> float:
        """Triggers per second."""
        return 1e12 / self.excitation_period

    @property
    def n_triggers(self) -> int:
        return max(1, int(math.ceil(self.sim_duration / self.excitation_period - 1e-9)))


@dataclass(frozen=True)
class PumpPulseTrain:
    """Periodic gated pump.

    ``shape`` is a template centred at t=0; only its form matters, it is
    rescaled so that its maximum equals ``peak_power``.  Between pulses the
    power never drops below the extinction floor
    ``peak_power * 10**(-extinction_ratio/10)``.
    """

    shape: TemporalProfile | None
    period: float = 40000.0
    peak_power: float = 85.0
    extinction_ratio: float = 20.0
    delay: float = 0.0
    _peak_norm: float = field(init=False, repr=False, compare=False, default=1.0)

    def __post_init__(self):
        if not self.peak_power >= 0:
            raise ConfigError("peak_power must be >= 0")
        if not self.extinction_ratio > 0:
            raise ConfigError("extinction_ratio must be > 0 dB")
        if not self.period > 0:
            raise ConfigError("period must be > 0")
        if self.shape is not None:
            object.__setattr__(self, "_peak_norm", self.shape.peak_value())

    @property
    def cw(self) -> bool:
        return self.shape is None

    @property
    def off_level(self) -> float:
        if self.cw:
            return self.peak_power
        return self.peak_power * 10.0 ** (-self.extinction_ratio / 10.0)

    @property
    def fwhm(self) -> float | None:
        return None if self.cw else self.shape.fwhm()

    def with_delay(self, delay: float) -> "PumpPulseTrain":
        return PumpPulseTrain(self.shape, self.period, self.peak_power, self.extinction_ratio, delay)

    def with_fwhm(self, fwhm: float) -> "PumpPulseTrain":
        if self.cw:
            raise ConfigError("a CW pump has no pulse width")
        if isinstance(self.shape, FlatTop):
            shape = FlatTop(0.0, fwhm, self.shape.edge_fwhm, semantics="power")
        else:
            shape = Gaussian(0.0, fwhm, semantics="power")
        return PumpPulseTrain(shape, self.period, self.peak_power, self.extinction_ratio, self.delay)


def pump_shape(kind: str, fwhm: float, edge_fwhm: float = DEFAULT_EDGE_FWHM_PS) -> TemporalProfile:
    """Unit-peak pump template of the requested kind centred at zero."""
    if kind == "gaussian":
        return Gaussian(0.0, fwhm, semantics="power")
    if kind == "flattop":
        return FlatTop(0.0, fwhm, edge_fwhm, semantics="power")
    raise ConfigError(f"unknown pump shape {kind!r}; expected one of {PUMP_SHAPES}")


def make_pump_train(cfg: TimingConfig, peak_power: float = 85.0, extinction_ratio: float = 20.0,
                    shape: str = "gaussian", edge_fwhm: float = DEFAULT_EDGE_FWHM_PS) -> PumpPulseTrain:
    template = None if cfg.cw else pump_shape(shape, cfg.pulse_fwhm, edge_fwhm)
    return PumpPulseTrain(template, cfg.pump_period, peak_power, extinction_ratio, cfg.delay)


def build_timeline(cfg: TimingConfig) -> np.ndarray:
    """Excitation trigger times ``k * excitation_period`` inside the simulated duration."""
    return cfg.excitation_period * np.arange(cfg.n_triggers, dtype=float)


def gated_triggers(cfg: TimingConfig) -> np.ndarray:
    """Trigger times that coincide with a pump gate."""
    triggers = build_timeline(cfg)
    return triggers[:: cfg.pump_divider]


def pump_power(train: PumpPulseTrain, t):
    """Instantaneous pump power (mW) at time(s) ``t`` (ps)."""
    t = np.asarray(t, dtype=float)
    if train.cw:
        out = np.full(t.shape, float(train.peak_power))
    else:
        n = np.rint((t - train.delay) / train.period)
        best = np.zeros(t.shape)
        for shift in (-1.0, 0.0, 1.0):
            x = t - train.delay - (n + shift) * train.period
            best = np.maximum(best, train.shape(x))
        out = np.maximum(train.peak_power * best / train._peak_norm, train.off_level)
    return float(out) if out.ndim == 0 else out


def photon_emission_time(trigger, source, rng: np.random.Generator, size=None):
    """Emission time(s): trigger plus an exponential latency with the source lifetime."""
    return trigger + rng.exponential(source.lifetime, size)
