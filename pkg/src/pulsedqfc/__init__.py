"""Monte-Carlo model of pulsed quantum frequency conversion of single photons.

Modules: ``waveform`` (temporal profiles), ``timing`` (triggers and the pump
train), ``conversion`` (saturating conversion law and Raman noise),
``detection`` (detectors, TCSPC, HBT correlation), ``analysis`` (estimators
and closed-form checks) and ``engine`` (scenario runs, sweeps, sharding).
"""
from .config import ScenarioConfig, load_scenario
from .conversion import ConversionModel, PhotonSource
from .detection import DetectorModel, Histogram, TimeTagStream
from .engine import RunSummary, merge_shards, run_scenario, sweep
from .timing import PumpPulseTrain, TimingConfig

__version__ = "0.1.0"

__all__ = ["ConversionModel", "DetectorModel", "Histogram", "PhotonSource", "PumpPulseTrain", "RunSummary",
           "ScenarioConfig", "TimeTagStream", "TimingConfig", "load_scenario", "merge_shards", "run_scenario",
           "sweep"]
