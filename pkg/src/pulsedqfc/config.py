"""Scenario files.

Scenarios are YAML documents with one section per component.  The schema is
versioned by ``schema_version`` and listed in the README.  Unknown keys are
rejected so typos do not pass silently.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .conversion import ConversionModel, PhotonSource
from .detection import DEFAULT_G2_BIN_PS, DEFAULT_G2_MAX_DELAY_PS, DetectorModel
from .errors import ConfigError
from .timing import PUMP_SHAPES, TimingConfig
from .waveform import DEFAULT_EDGE_FWHM_PS

SCHEMA_VERSION = 1
DEFAULT_CHUNK_TRIGGERS = 500_000_000


@dataclass(frozen=True)
class PumpSettings:
    """Pump section.  ``delay`` is a number (ps) or ``"optimal"``."""

    mode: str = "pulsed"
    shape: str = "gaussian"
    fwhm_ps: float = 260.0
    delay: float | str = "optimal"
    peak_power_mw: float = 85.0
    extinction_ratio_db: float = 20.0
    edge_fwhm_ps: float = DEFAULT_EDGE_FWHM_PS

    def __post_init__(self):
        if self.mode not in ("pulsed", "cw"):
            raise ConfigError(f"pump.mode must be 'pulsed' or 'cw', got {self.mode!r}")
        if self.shape not in PUMP_SHAPES:
            raise ConfigError(f"pump.shape must be one of {PUMP_SHAPES}, got {self.shape!r}")
        if isinstance(self.delay, str) and self.delay != "optimal":
            raise ConfigError("pump.delay must be a number or 'optimal'")


@dataclass(frozen=True)
class Calibration:
    """Optional calibrations resolved before a run.

    ``raman_rho``: choose the Raman coefficient so that a CW pump at the same
    peak power gives signal fraction ``raman_rho``.  ``multiphoton_g2``:
    choose the multiphoton probability so that the predicted g2(0) of this
    scenario equals the target.
    """

    raman_rho: float | None = None
    multiphoton_g2: float | None = None


@dataclass(frozen=True)
class AnalysisSettings:
    sync: str = "pump"
    tcspc_bin_ps: float = 16.0
    tcspc_offset_ps: float = -2000.0
    g2: bool = True
    g2_bin_ps: float = DEFAULT_G2_BIN_PS
    g2_max_delay_ps: float = DEFAULT_G2_MAX_DELAY_PS
    fwhm: bool = True
    fwhm_window_ps: tuple[float, float] | None = None
    lifetime_window_ps: tuple[float, float] | None = None
    lifetime_background_window_ps: tuple[float, float] | None = None

    def __post_init__(self):
        if self.sync not in ("pump", "excitation"):
            raise ConfigError("analysis.sync must be 'pump' or 'excitation'")
        for name in ("fwhm_window_ps", "lifetime_window_ps", "lifetime_background_window_ps"):
            v = getattr(self, name)
            if v is not None:
                if len(v) != 2 or not v[0] < v[1]:
                    raise ConfigError(f"analysis.{name} must be [lo, hi] with lo < hi")
                object.__setattr__(self, name, (float(v[0]), float(v[1])))


@dataclass(frozen=True)
class SweepSettings:
    width_values_ps: tuple[float, ...] = (260.0, 500.0, 1250.0, 2500.0, 5000.0)
    delay_values_ps: tuple[float, ...] = (0.0, 500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0, 3350.0)
    # sweep delays are measured from the optimal delay ("optimal") or the trigger ("trigger")
    delay_reference: str = "optimal"
    subtract_background: bool = True

    def __post_init__(self):
        if self.delay_reference not in ("optimal", "trigger"):
            raise ConfigError("sweep.delay_reference must be 'optimal' or 'trigger'")
        object.__setattr__(self, "width_values_ps", tuple(float(v) for v in self.width_values_ps))
        object.__setattr__(self, "delay_values_ps", tuple(float(v) for v in self.delay_values_ps))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    timing: TimingConfig
    pump: PumpSettings
    conversion: ConversionModel
    source: PhotonSource
    detectors: tuple[DetectorModel, DetectorModel]
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    calibration: Calibration = field(default_factory=Calibration)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    seed: int = 0
    shards: int = 1
    chunk_triggers: int = DEFAULT_CHUNK_TRIGGERS
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        if self.shards < 1:
            raise ConfigError("shards must be >= 1")
        if self.chunk_triggers < 1:
            raise ConfigError("chunk_triggers must be >= 1")
        if self.pump.mode == "cw" and self.timing.pulse_fwhm is not None:
            object.__setattr__(self, "timing", replace(self.timing, pulse_fwhm=None))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["detectors"] = {"a": d["detectors"][0], "b": d["detectors"][1]}
        return _plain(d)

    def fingerprint(self) -> str:
        """Stable digest of everything that defines the physics and binning."""
        d = self.to_dict()
        d.pop("shards", None)
        d.pop("description", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict | None, section: str, rename: dict[str, str] | None = None):
    data = dict(data or {})
    rename = rename or {}
    names = {f.name for f in fields(cls) if f.init}
    kwargs = {}
    for key, value in data.items():
        target = rename.get(key, key)
        if target not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[target] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}") from exc


_TIMING_KEYS = {"excitation_period_ps": "excitation_period", "pump_divider": "pump_divider",
                "sim_duration_ps": "sim_duration"}
_CONVERSION_KEYS = {"eta_max": "eta_max", "p_sat_mw": "p_sat", "qpm_min_pulse_fwhm_ps": "qpm_min_pulse_fwhm",
                    "raman_coeff_per_s_per_mw": "raman_coeff"}
_SOURCE_KEYS = {"lifetime_ps": "lifetime", "collection_efficiency": "collection_efficiency",
                "emission_prob_per_pulse": "emission_prob_per_pulse", "multiphoton_prob": "multiphoton_prob",
                "coherence_time_ps": "coherence_time"}
_DETECTOR_KEYS = {"efficiency": "efficiency", "jitter_fwhm_ps": "jitter_fwhm", "dark_rate_per_s": "dark_rate",
                  "dead_time_ps": "dead_time"}
_TOP_KEYS = {"schema_version", "name", "description", "seed", "shards", "chunk_triggers", "timing", "pump",
             "conversion", "source", "detector", "detectors", "analysis", "calibration", "sweep"}


def from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "schema_version" not in doc:
        raise ConfigError("scenario is missing schema_version")
    pump = _build(PumpSettings, doc.get("pump"), "pump")
    timing_doc = dict(doc.get("timing") or {})
    timing = _build(TimingConfig, timing_doc, "timing", _TIMING_KEYS)
    delay = 0.0 if pump.delay == "optimal" else float(pump.delay)
    timing = replace(timing, delay=delay, pulse_fwhm=None if pump.mode == "cw" else float(pump.fwhm_ps))
    conversion = _build(ConversionModel, doc.get("conversion"), "conversion", _CONVERSION_KEYS)
    source = _build(PhotonSource, doc.get("source"), "source", _SOURCE_KEYS)
    if "detectors" in doc and "detector" in doc:
        raise ConfigError("give either 'detector' (both arms) or 'detectors' (a/b), not both")
    if "detectors" in doc:
        dets = doc["detectors"] or {}
        if set(dets) != {"a", "b"}:
            raise ConfigError("detectors must have exactly the keys 'a' and 'b'")
        detectors = (_build(DetectorModel, dets["a"], "detectors.a", _DETECTOR_KEYS),
                     _build(DetectorModel, dets["b"], "detectors.b", _DETECTOR_KEYS))
    else:
        det = _build(DetectorModel, doc.get("detector"), "detector", _DETECTOR_KEYS)
        detectors = (det, det)
    analysis = _build(AnalysisSettings, doc.get("analysis"), "analysis")
    calibration = _build(Calibration, doc.get("calibration"), "calibration")
    sweep = _build(SweepSettings, doc.get("sweep"), "sweep")
    try:
        return ScenarioConfig(
            name=str(doc.get("name", "scenario")), timing=timing, pump=pump, conversion=conversion,
            source=source, detectors=detectors, analysis=analysis, calibration=calibration, sweep=sweep,
            seed=int(doc.get("seed", 0)), shards=int(doc.get("shards", 1)),
            chunk_triggers=int(doc.get("chunk_triggers", DEFAULT_CHUNK_TRIGGERS)),
            description=str(doc.get("description", "")), schema_version=int(doc["schema_version"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponents without a sign or dot (``6e14``) as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def bundled_scenarios() -> list[str]:
    root = resources.files("pulsedqfc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(name_or_path: str | Path) -> ScenarioConfig:
    """Load a scenario from a path, or by name from the bundled set."""
    path = Path(name_or_path)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("pulsedqfc") / "scenarios" / f"{name_or_path}.yaml"
        if not res.is_file():
            raise ConfigError(f"no scenario file or bundled scenario named {str(name_or_path)!r}")
        text = res.read_text()
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {name_or_path}: {exc}") from exc
    return from_dict(copy.deepcopy(doc))
