"""Temporal profiles: photon wavepackets and pump envelopes.

All times are in picoseconds.  A profile is an immutable, nonnegative function
of time carrying a ``semantics`` tag: ``"density"`` for a detection-time
probability density, ``"power"`` for an optical power envelope.  Every variant
carries an ``amplitude`` multiplier so that the same shape can represent a
unit-peak pump template or a unit-area density.

The FWHM of a one-sided exponential is its width at half of the onset value,
``lifetime * ln 2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import optimize, signal, special

from .errors import Multimodal, NonNormalizable, ProfileError, SemanticsError

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
DEFAULT_STEP_PS = 1.0
DEFAULT_EDGE_FWHM_PS = 100.0
# convolution grids are padded by this many kernel sigmas on each side
KERNEL_PAD_SIGMAS = 5.0

_SEMANTICS = ("density", "power")


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / FWHM_PER_SIGMA


class TemporalProfile:
    """Common interface of every profile variant.

    Subclasses are frozen dataclasses; "modifying" a profile returns a new one.
    """

    amplitude: float
    semantics: str

    def _check_common(self) -> None:
        if self.semantics not in _SEMANTICS:
            raise ProfileError(f"semantics must be one of {_SEMANTICS}, got {self.semantics!r}")
        if not math.isfinite(self.amplitude) or self.amplitude < 0:
            raise ProfileError(f"amplitude must be finite and >= 0, got {self.amplitude}")

    # -- evaluation -----------------------------------------------------
    def __call__(self, t):
        """Evaluate at ``t`` (scalar or array, ps)."""
        out = self._values(np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def _values(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def integral(self) -> float:
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Finite interval outside which the profile is negligible."""
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Times where the profile is not smooth (used by quadrature)."""
        return ()

    def peak_time(self) -> float:
        raise NotImplementedError

    def peak_value(self) -> float:
        return float(self(self.peak_time()))

    # -- transformations ------------------------------------------------
    def scaled(self, factor: float) -> "TemporalProfile":
        return replace(self, amplitude=self.amplitude * factor)

    def with_semantics(self, semantics: str) -> "TemporalProfile":
        return replace(self, semantics=semantics)

    def normalize(self) -> "TemporalProfile":
        mass = self.integral()
        if not math.isfinite(mass) or mass <= 0:
            raise NonNormalizable(f"cannot normalise {type(self).__name__} with mass {mass}")
        return replace(self, amplitude=self.amplitude / mass, semantics="density")

    def fwhm(self) -> float:
        return _numeric_fwhm(self)

    def convolve_gaussian(self, kernel_fwhm: float) -> "TemporalProfile":
        raise NotImplementedError

    def to_sampled(self, step: float = DEFAULT_STEP_PS, span: tuple[float, float] | None = None) -> "Sampled":
        lo, hi = span if span is not None else self.support()
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        t = lo + step * np.arange(n)
        return Sampled(lo, step, self._values(t), semantics=self.semantics)

    # -- statistics of the normalised density ---------------------------
    def cdf(self, t):
        """CDF of the normalised profile."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        """Draw detection times distributed as this density."""
        if self.semantics != "density":
            raise SemanticsError("sampling requires a density profile, got a power profile")
        return self._sample(rng, size)

    def _sample(self, rng, size):
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialDecay(TemporalProfile):
    """One-sided exponential ``amplitude * exp(-(t - onset)/lifetime)`` for t >= onset."""

    onset: float = 0.0
    lifetime: float = 1500.0
    amplitude: float = 1.0
    semantics: str = "density"

    def __post_init__(self):
        self._check_common()
        if not self.lifetime > 0:
            raise ProfileError(f"lifetime must be > 0, got {self.lifetime}")

    def _values(self, t):
        x = t - self.onset
        return np.where(x >= 0, self.amplitude * np.exp(-np.maximum(x, 0.0) / self.lifetime), 0.0)

    def integral(self):
        return self.amplitude * self.lifetime

    def support(self):
        return (self.onset, self.onset + 40.0 * self.lifetime)

    def breakpoints(self):
        return (self.onset,)

    def peak_time(self):
        return self.onset

    def fwhm(self):
        return self.lifetime * math.log(2.0)

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        if kernel_fwhm == 0:
            return self
        return ExGaussian(self.onset, self.lifetime, kernel_fwhm, self.amplitude, self.semantics)

    def cdf(self, t):
        x = np.asarray(t, dtype=float) - self.onset
        return -np.expm1(-np.maximum(x, 0.0) / self.lifetime)

    def _sample(self, rng, size):
        return self.onset + rng.exponential(self.lifetime, size)


@dataclass(frozen=True)
class Gaussian(TemporalProfile):
    """Gaussian with peak value ``amplitude`` at ``center``."""

    center: float = 0.0
    fwhm_ps: float = 260.0
    amplitude: float = 1.0
    semantics: str = "density"

    def __post_init__(self):
        self._check_common()
        if not self.fwhm_ps > 0:
            raise ProfileError(f"fwhm must be > 0, got {self.fwhm_ps}")

    @property
    def sigma(self) -> float:
        return fwhm_to_sigma(self.fwhm_ps)

    def _values(self, t):
        z = (t - self.center) / self.sigma
        return self.amplitude * np.exp(-0.5 * z * z)

    def integral(self):
        return self.amplitude * self.sigma * math.sqrt(2.0 * math.pi)

    def support(self):
        half = 10.0 * self.sigma
        return (self.center - half, self.center + half)

    def peak_time(self):
        return self.center

    def fwhm(self):
        return self.fwhm_ps

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        if kernel_fwhm == 0:
            return self
        width = math.hypot(self.fwhm_ps, kernel_fwhm)
        # area is conserved, so the peak drops by the width ratio
        return replace(self, fwhm_ps=width, amplitude=self.amplitude * self.fwhm_ps / width)

    def cdf(self, t):
        return special.ndtr((np.asarray(t, dtype=float) - self.center) / self.sigma)

    def _sample(self, rng, size):
        return rng.normal(self.center, self.sigma, size)


@dataclass(frozen=True)
class FlatTop(TemporalProfile):
    """Rectangular gate of width ``fwhm_ps`` smoothed by a Gaussian of ``edge_fwhm``.

    ``amplitude`` is the height of the underlying rectangle; for gates much
    wider than their edges this is also the peak value, and the FWHM equals
    ``fwhm_ps``.
    """

    center: float = 0.0
    fwhm_ps: float = 1000.0
    edge_fwhm: float = DEFAULT_EDGE_FWHM_PS
    amplitude: float = 1.0
    semantics: str = "density"

    def __post_init__(self):
        self._check_common()
        if not self.fwhm_ps > 0:
            raise ProfileError(f"fwhm must be > 0, got {self.fwhm_ps}")
        if self.edge_fwhm < 0:
            raise ProfileError(f"edge_fwhm must be >= 0, got {self.edge_fwhm}")

    def _values(self, t):
        half = 0.5 * self.fwhm_ps
        x = t - self.center
        if self.edge_fwhm == 0:
            return np.where(np.abs(x) <= half, self.amplitude, 0.0)
        s = fwhm_to_sigma(self.edge_fwhm) * math.sqrt(2.0)
        return 0.5 * self.amplitude * (special.erf((x + half) / s) - special.erf((x - half) / s))

    def integral(self):
        return self.amplitude * self.fwhm_ps

    def support(self):
        pad = 10.0 * fwhm_to_sigma(self.edge_fwhm) + 1.0
        half = 0.5 * self.fwhm_ps
        return (self.center - half - pad, self.center + half + pad)

    def breakpoints(self):
        if self.edge_fwhm == 0:
            return (self.center - 0.5 * self.fwhm_ps, self.center + 0.5 * self.fwhm_ps)
        return ()

    def peak_time(self):
        return self.center

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        if kernel_fwhm == 0:
            return self
        return replace(self, edge_fwhm=math.hypot(self.edge_fwhm, kernel_fwhm))

    def cdf(self, t):
        return _cdf_by_quadrature(self, t)

    def _sample(self, rng, size):
        half = 0.5 * self.fwhm_ps
        u = rng.uniform(self.center - half, self.center + half, size)
        if self.edge_fwhm == 0:
            return u
        return u + rng.normal(0.0, fwhm_to_sigma(self.edge_fwhm), size)


@dataclass(frozen=True)
class Constant(TemporalProfile):
    level: float = 1.0
    amplitude: float = 1.0
    semantics: str = "power"

    def __post_init__(self):
        self._check_common()
        if not (math.isfinite(self.level) and self.level >= 0):
            raise ProfileError(f"level must be finite and >= 0, got {self.level}")

    def _values(self, t):
        return np.full(np.shape(t), self.amplitude * self.level)

    def integral(self):
        return math.inf if self.amplitude * self.level > 0 else 0.0

    def support(self):
        return (-math.inf, math.inf)

    def peak_time(self):
        raise Multimodal("a constant profile has no unique maximum")

    def peak_value(self):
        return self.amplitude * self.level

    def fwhm(self):
        raise Multimodal("a constant profile has no unique maximum")

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        return self

    def to_sampled(self, step=DEFAULT_STEP_PS, span=None):
        if span is None:
            raise ProfileError("a constant profile needs an explicit span to be sampled")
        return super().to_sampled(step, span)

    def _sample(self, rng, size):
        raise NonNormalizable("a constant profile on an unbounded support cannot be sampled")


@dataclass(frozen=True)
class ExGaussian(TemporalProfile):
    """Exponential decay (value ``amplitude`` at onset) convolved with a unit-area Gaussian."""

    onset: float = 0.0
    lifetime: float = 1500.0
    kernel_fwhm: float = 350.0
    amplitude: float = 1.0
    semantics: str = "density"

    def __post_init__(self):
        self._check_common()
        if not self.lifetime > 0:
            raise ProfileError(f"lifetime must be > 0, got {self.lifetime}")
        if not self.kernel_fwhm > 0:
            raise ProfileError(f"kernel_fwhm must be > 0, got {self.kernel_fwhm}")

    @property
    def sigma(self) -> float:
        return fwhm_to_sigma(self.kernel_fwhm)

    def _shape(self, t):
        # exp(s^2/2tau^2 - x/tau) * Phi((x - s^2/tau)/s), evaluated without overflow
        s, tau = self.sigma, self.lifetime
        x = np.asarray(t, dtype=float) - self.onset
        z = (s * s / tau - x) / (s * math.sqrt(2.0))
        pos = z >= 0
        zp = np.where(pos, z, 0.0)
        zn = np.where(pos, 0.0, z)
        via_erfcx = 0.5 * np.exp(-0.5 * (x / s) ** 2) * special.erfcx(zp)
        via_erfc = 0.5 * np.exp(np.minimum(0.5 * (s / tau) ** 2 - x / tau, 0.0)) * special.erfc(zn)
        return np.where(pos, via_erfcx, via_erfc)

    def _values(self, t):
        return self.amplitude * self._shape(t)

    def integral(self):
        return self.amplitude * self.lifetime

    def support(self):
        pad = 10.0 * self.sigma
        return (self.onset - pad, self.onset + 40.0 * self.lifetime + pad)

    def peak_time(self):
        res = optimize.minimize_scalar(
            lambda t: -float(self._shape(t)),
            bounds=(self.onset - 3 * self.sigma, self.onset + 5 * self.sigma + self.lifetime),
            method="bounded",
            options={"xatol": 1e-6},
        )
        return float(res.x)

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        if kernel_fwhm == 0:
            return self
        return replace(self, kernel_fwhm=math.hypot(self.kernel_fwhm, kernel_fwhm))

    def cdf(self, t):
        x = np.asarray(t, dtype=float) - self.onset
        return special.ndtr(x / self.sigma) - self._shape(t)

    def _sample(self, rng, size):
        return self.onset + rng.exponential(self.lifetime, size) + rng.normal(0.0, self.sigma, size)


@dataclass(frozen=True, eq=False)
class Sampled(TemporalProfile):
    """Values on a uniform grid ``start + step * i``.

    Linear interpolation inside the grid, zero outside.
    """

    start: float
    step: float
    values: np.ndarray
    amplitude: float = 1.0
    semantics: str = "density"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        self._check_common()
        if not self.step > 0:
            raise ProfileError(f"step must be > 0, got {self.step}")
        if vals.ndim != 1 or vals.size < 1:
            raise ProfileError("values must be a non-empty 1-D array")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ProfileError("sampled values must be finite and >= 0")

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.values.size)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.values.size - 1)

    def _values(self, t):
        v = np.interp(t, self.times, self.values, left=0.0, right=0.0)
        inside = (t >= self.start) & (t <= self.stop)
        return self.amplitude * np.where(inside, v, 0.0)

    def integral(self):
        return self.amplitude * float(np.trapezoid(self.values, dx=self.step))

    def support(self):
        return (self.start, self.stop)

    def peak_time(self):
        return float(self.times[int(np.argmax(self.values))])

    def normalize(self):
        mass = self.integral()
        if not mass > 0:
            raise NonNormalizable("sampled profile has zero mass")
        return Sampled(self.start, self.step, self.values * (self.amplitude / mass), semantics="density")

    def fwhm(self):
        return _grid_fwhm(self.times, self.values)

    def convolve_gaussian(self, kernel_fwhm):
        _check_kernel(kernel_fwhm)
        if kernel_fwhm == 0:
            return self
        sigma = fwhm_to_sigma(kernel_fwhm)
        pad = int(math.ceil(KERNEL_PAD_SIGMAS * sigma / self.step))
        k = self.step * np.arange(-pad, pad + 1)
        kernel = np.exp(-0.5 * (k / sigma) ** 2)
        kernel /= kernel.sum()
        # halve the end samples so the trapezoidal mass is conserved exactly
        weights = self.values.copy()
        if weights.size > 1:
            weights[[0, -1]] *= 0.5
        padded = np.concatenate([np.zeros(pad), weights, np.zeros(pad)])
        out = signal.fftconvolve(padded, kernel, mode="same")
        return Sampled(self.start - pad * self.step, self.step, np.clip(out, 0.0, None),
                       self.amplitude, self.semantics)

    def to_sampled(self, step=DEFAULT_STEP_PS, span=None):
        if span is None and step == self.step:
            return self
        return super().to_sampled(step, span)

    def _cumulative(self) -> np.ndarray:
        v = self.values
        seg = 0.5 * (v[1:] + v[:-1]) * self.step
        return np.concatenate([[0.0], np.cumsum(seg)])

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        cum = self._cumulative()
        total = cum[-1]
        if total <= 0:
            raise NonNormalizable("sampled profile has zero mass")
        v, h = self.values, self.step
        pos = np.clip((t - self.start) / h, 0.0, v.size - 1)
        i = np.minimum(np.floor(pos).astype(int), max(v.size - 2, 0))
        s = (pos - i) * h
        y0 = v[i]
        y1 = v[np.minimum(i + 1, v.size - 1)]
        partial = y0 * s + (y1 - y0) * s * s / (2.0 * h)
        return np.clip((cum[i] + partial) / total, 0.0, 1.0)

    def _sample(self, rng, size):
        v, h = self.values, self.step
        if v.size == 1:
            raise NonNormalizable("a single grid point carries no mass")
        cum = self._cumulative()
        total = cum[-1]
        if total <= 0:
            raise NonNormalizable("sampled profile has zero mass")
        u = rng.random(size) * total
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, v.size - 2)
        m = u - cum[i]
        y0, y1 = v[i], v[i + 1]
        slope = (y1 - y0) / h
        # exact inversion of the piecewise-quadratic CDF inside segment i
        flat = np.abs(slope) * h < 1e-12 * np.maximum(y0 + y1, 1e-300)
        disc = np.sqrt(np.maximum(y0 * y0 + 2.0 * slope * m, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s_quad = np.where(flat, 0.0, (disc - y0) / np.where(flat, 1.0, slope))
            s_flat = np.where(y0 > 0, m / np.where(y0 > 0, y0, 1.0), 0.0)
        s = np.clip(np.where(flat, s_flat, s_quad), 0.0, h)
        return self.start + i * h + s


# -- module-level operations -------------------------------------------------

def evaluate(p: TemporalProfile, t):
    """Value of ``p`` at time ``t`` (ps)."""
    return p(t)


def normalize(p: TemporalProfile) -> TemporalProfile:
    return p.normalize()


def fwhm(p: TemporalProfile) -> float:
    return p.fwhm()


def convolve_gaussian(p: TemporalProfile, kernel_fwhm: float) -> TemporalProfile:
    """Convolve with a unit-area Gaussian of FWHM ``kernel_fwhm`` (ps)."""
    return p.convolve_gaussian(kernel_fwhm)


def sample_time(p: TemporalProfile, rng: np.random.Generator, size=None):
    return p.sample(rng, size)


def quadrature_convolution(p: TemporalProfile, kernel_fwhm: float, t, order: int = 64,
                           panels: int = 16) -> np.ndarray:
    """Direct numerical convolution ``(p * K)(t)`` by composite Gauss-Legendre quadrature.

    The kernel is integrated over +-10 sigma, with panel boundaries inserted at
    the profile's breakpoints so that jumps do not spoil the convergence.  This
    is deliberately independent of the closed-form convolution paths.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    sigma = fwhm_to_sigma(kernel_fwhm)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    out = np.empty_like(t)
    for j, tj in enumerate(t):
        lo, hi = tj - 10 * sigma, tj + 10 * sigma
        edges = np.linspace(lo, hi, panels + 1)
        cuts = [b for b in p.breakpoints() if lo < b < hi]
        edges = np.unique(np.concatenate([edges, cuts]))
        a, b = edges[:-1, None], edges[1:, None]
        s = 0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)
        w = 0.5 * (b - a) * weights[None, :]
        kern = np.exp(-0.5 * ((tj - s) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        out[j] = np.sum(w * p._values(s) * kern)
    return out


def save_csv(p: Sampled, path: str | Path) -> None:
    """Write a sampled profile as ``time_ps,value`` rows under a header line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_ps", "value"])
        for t, v in zip(p.times, p.values * p.amplitude):
            writer.writerow([repr(float(t)), repr(float(v))])


def load_csv(path: str | Path, semantics: str = "density") -> Sampled:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, v = data[:, 0], data[:, 1]
    if t.size > 1:
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9):
            raise ProfileError(f"{path}: time column is not a uniform grid")
        step = float(steps[0])
    else:
        step = DEFAULT_STEP_PS
    return Sampled(float(t[0]), step, v, semantics=semantics)


# -- helpers -----------------------------------------------------------------

def _check_kernel(kernel_fwhm: float) -> None:
    if not kernel_fwhm >= 0:
        raise ProfileError(f"kernel fwhm must be >= 0, got {kernel_fwhm}")


def _grid_fwhm(t: np.ndarray, v: np.ndarray) -> float:
    """Half-maximum width of a piecewise-linear curve; raises if multimodal."""
    imax = int(np.argmax(v))
    peak = v[imax]
    if not peak > 0:
        raise ProfileError("profile is identically zero")
    half = 0.5 * peak
    above = v >= half
    runs = np.count_nonzero(np.diff(above.astype(np.int8)) == 1) + int(above[0])
    if runs > 1:
        raise Multimodal(f"{runs} separate regions above half maximum")
    left = imax
    while left > 0 and v[left - 1] >= half:
        left -= 1
    right = imax
    while right < v.size - 1 and v[right + 1] >= half:
        right += 1
    if left == 0 or right == v.size - 1:
        raise ProfileError("half-maximum crossing lies outside the sampled range")
    tl = np.interp(half, [v[left - 1], v[left]], [t[left - 1], t[left]])
    tr = np.interp(half, [v[right + 1], v[right]], [t[right + 1], t[right]])
    return float(tr - tl)


def _numeric_fwhm(p: TemporalProfile) -> float:
    tp = p.peak_time()
    half = 0.5 * p.peak_value()
    lo, hi = p.support()
    f = lambda x: float(p(x)) - half  # noqa: E731
    left = optimize.brentq(f, lo, tp, xtol=1e-9)
    right = optimize.brentq(f, tp, hi, xtol=1e-9)
    return right - left


def _cdf_by_quadrature(p: TemporalProfile, t) -> np.ndarray:
    s = p.to_sampled(min(DEFAULT_STEP_PS, p.support()[1] - p.support()[0]))
    return s.cdf(t)
