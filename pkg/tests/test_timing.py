import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pulsedqfc.conversion import PhotonSource
from pulsedqfc.errors import ConfigError
from pulsedqfc.timing import (PumpPulseTrain, TimingConfig, build_timeline, gated_triggers, make_pump_train,
                              photon_emission_time, pump_power, pump_shape)

OFF_LEVEL_20DB = 0.85  # 85 mW * 10**(-20/10)


def test_timeline_five_triggers():
    cfg = TimingConfig(excitation_period=20000, sim_duration=100000)
    assert build_timeline(cfg).tolist() == [0, 20000, 40000, 60000, 80000]


def test_gated_triggers_half_rate():
    cfg = TimingConfig(excitation_period=20000, pump_divider=2, sim_duration=100000)
    assert gated_triggers(cfg).tolist() == [0, 40000, 80000]
    assert cfg.pump_period == 40000
    assert 1e12 / cfg.pump_period == pytest.approx(25e6)


def test_short_duration_single_trigger():
    cfg = TimingConfig(sim_duration=5000)
    assert build_timeline(cfg).tolist() == [0.0]


def test_invalid_timing():
    with pytest.raises(ConfigError):
        TimingConfig(excitation_period=0)
    with pytest.raises(ConfigError):
        TimingConfig(pump_divider=0)
    with pytest.raises(ConfigError):
        TimingConfig(pump_divider=1.5)
    with pytest.raises(ConfigError):
        PumpPulseTrain(pump_shape("gaussian", 260), extinction_ratio=0)
    with pytest.raises(ConfigError):
        PumpPulseTrain(pump_shape("gaussian", 260), peak_power=-1)


def test_pump_power_peak_floor_cw():
    train = make_pump_train(TimingConfig(pulse_fwhm=260, delay=500))
    assert pump_power(train, 500.0) == pytest.approx(85.0)
    assert pump_power(train, 500.0 + 20000.0) == pytest.approx(OFF_LEVEL_20DB)
    assert train.off_level == pytest.approx(OFF_LEVEL_20DB)
    cw = make_pump_train(TimingConfig(pulse_fwhm=None))
    assert np.all(pump_power(cw, np.array([-1e9, 0.0, 12345.0])) == 85.0)


def test_flattop_pump():
    train = make_pump_train(TimingConfig(pulse_fwhm=5000), shape="flattop")
    assert pump_power(train, 0.0) == pytest.approx(85.0, rel=1e-9)
    assert pump_power(train, 2500.0) == pytest.approx(42.5, rel=1e-6)
    assert train.fwhm == pytest.approx(5000.0, rel=1e-6)


def test_unpumped_triggers_are_odd_multiples():
    cfg = TimingConfig(sim_duration=400000)
    train = make_pump_train(cfg)
    trig = build_timeline(cfg)
    p = pump_power(train, trig)
    k = np.rint(trig / cfg.excitation_period).astype(int)
    assert np.all(p[k % 2 == 0] == pytest.approx(85.0))
    assert np.allclose(p[k % 2 == 1], OFF_LEVEL_20DB)


@given(st.floats(-1e7, 1e7), st.floats(10.0, 20000.0), st.floats(0.5, 40.0), st.floats(-5e4, 5e4),
       st.sampled_from(["gaussian", "flattop"]))
def test_pump_power_periodic_and_bounded(t, width, er, delay, shape):
    train = PumpPulseTrain(pump_shape(shape, width), 40000.0, 85.0, er, delay)
    p0 = pump_power(train, t)
    assert train.off_level - 1e-9 <= p0 <= 85.0 + 1e-9
    assert pump_power(train, t + 40000.0) == pytest.approx(p0, rel=1e-6, abs=1e-9)


def test_emission_latency_mean():
    src = PhotonSource(lifetime=1500.0)
    x = photon_emission_time(0.0, src, np.random.default_rng(7), 10**6)
    assert abs(x.mean() - 1500.0) < 5.0
    assert np.all(x >= 0)


def test_emission_short_lifetime_limit():
    src = PhotonSource(lifetime=1e-9)
    x = photon_emission_time(40000.0, src, np.random.default_rng(8), 100)
    assert np.allclose(x, 40000.0, atol=1e-6)


def test_paper_lifetime_default():
    assert PhotonSource().lifetime == 1500.0
    assert PhotonSource().wavepacket().integral() == pytest.approx(1.0)


def test_with_fwhm_and_delay_keep_other_fields():
    train = make_pump_train(TimingConfig(pulse_fwhm=260, delay=100), extinction_ratio=25)
    t2 = train.with_fwhm(1000).with_delay(-50)
    assert t2.fwhm == pytest.approx(1000)
    assert t2.delay == -50 and t2.extinction_ratio == 25 and t2.period == train.period
    with pytest.raises(ConfigError):
        make_pump_train(TimingConfig(pulse_fwhm=None)).with_fwhm(10)


def test_off_level_formula():
    for er in (10.0, 20.0, 30.0):
        train = PumpPulseTrain(pump_shape("gaussian", 260), extinction_ratio=er)
        assert train.off_level == pytest.approx(85.0 * 10 ** (-er / 10))
        assert math.isclose(pump_power(train, 20000.0), train.off_level, rel_tol=1e-12)
