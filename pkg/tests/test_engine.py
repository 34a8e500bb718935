import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pulsedqfc import engine
from pulsedqfc.config import bundled_scenarios, from_dict, load_scenario
from pulsedqfc.detection import pair_delay_counts
from pulsedqfc.errors import ConfigError, ConfigMismatch, QpmViolation


def short(name, seconds, shards=1, chunk=None, **analysis):
    cfg = load_scenario(name)
    cfg = replace(cfg, timing=replace(cfg.timing, sim_duration=seconds * 1e12), shards=shards)
    if chunk is not None:
        cfg = replace(cfg, chunk_triggers=chunk)
    if analysis:
        cfg = replace(cfg, analysis=replace(cfg.analysis, **analysis))
    return cfg


QUIET = dict(g2=False, fwhm=False, lifetime_window_ps=None)


@pytest.fixture(scope="module")
def pulsed_cfg():
    return short("paper_pulsed_500ps_g2", 4.0, shards=4, chunk=30_000_000)


@pytest.fixture(scope="module")
def pulsed_shards(pulsed_cfg):
    res = engine.resolve(pulsed_cfg)
    return [engine.run_shard(pulsed_cfg, i, res) for i in range(pulsed_cfg.shards)]


def fingerprint(s):
    return (json.dumps(s.to_dict(), sort_keys=True), s.tcspc_a.counts.tobytes(), s.tcspc_b.counts.tobytes(),
            s.correlation.counts.tobytes())


def test_stream_seeds_distinct():
    a = engine.stream_seed(1, 0, 0, "emission").generate_state(4)
    b = engine.stream_seed(1, 0, 0, "raman").generate_state(4)
    c = engine.stream_seed(1, 0, 1, "emission").generate_state(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert engine.derived_seed(5, "sweep", 0) == engine.derived_seed(5, "sweep", 0)
    assert engine.derived_seed(5, "sweep", 0) != engine.derived_seed(5, "sweep", 1)


def test_bernoulli_indices_statistics():
    rng = np.random.default_rng(1)
    n, q = 10**7, 1e-3
    idx = engine.bernoulli_indices(n, q, rng)
    assert abs(idx.size - n * q) < 3 * math.sqrt(n * q * (1 - q))
    assert np.all(np.diff(idx) > 0) and idx[0] >= 0 and idx[-1] < n
    # counts per block are binomial
    per_block = np.bincount(idx // 10000, minlength=1000)
    assert stats.chisquare(np.bincount(per_block, minlength=25)[:20],
                           1000 * stats.binom.pmf(np.arange(20), 10000, q) /
                           stats.binom.cdf(19, 10000, q) * (per_block < 20).mean()).pvalue > 1e-3


@given(st.integers(0, 500), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_bernoulli_indices_range(n, q, seed):
    idx = engine.bernoulli_indices(n, q, np.random.default_rng(seed))
    assert idx.size <= n
    assert np.all(idx >= 0) and np.all(idx < max(n, 1))
    assert np.unique(idx).size == idx.size
    if q >= 1:
        assert idx.size == n


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_seam_reconstructs_single_pass(seed, n_parts):
    rng = np.random.default_rng(seed)
    total = 2e7
    ta = np.sort(rng.uniform(0, total, 600))
    tb = np.sort(rng.uniform(0, total, 600))
    max_delay, bw = 1e5, 256.0
    reach = (math.floor(max_delay / bw + 1e-9) + 0.5) * bw
    margin = reach + 1.0
    cuts = np.linspace(0, total, n_parts + 1)
    counts = np.zeros_like(pair_delay_counts(ta, tb, max_delay, bw))
    tail = None
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        pa = ta[(ta >= lo) & (ta < hi)] if hi < total else ta[ta >= lo]
        pb = tb[(tb >= lo) & (tb < hi)] if hi < total else tb[tb >= lo]
        counts += pair_delay_counts(pa, pb, max_delay, bw)
        ha, tla = engine._edges(pa, lo, hi, margin)
        hb, tlb = engine._edges(pb, lo, hi, margin)
        if tail is not None:
            counts += engine._seam(tail, (ha, hb), max_delay, bw)
        tail = (tla, tlb)
    np.testing.assert_array_equal(counts, pair_delay_counts(ta, tb, max_delay, bw))


def test_determinism_byte_identical(tmp_path):
    cfg = short("paper_pulsed_500ps_g2", 0.5)
    for d in ("a", "b"):
        engine.write_run(engine.run_scenario(cfg), tmp_path / d)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_different_seed_changes_output():
    cfg = short("paper_pulsed_260ps_jitter50", 0.2, g2=False)
    a = engine.run_scenario(cfg)
    b = engine.run_scenario(replace(cfg, seed=cfg.seed + 1))
    assert not np.array_equal(a.tcspc_a.counts, b.tcspc_a.counts)


def test_workers_do_not_change_results():
    cfg = short("paper_pulsed_500ps_g2", 0.6, shards=3)
    assert fingerprint(engine.run_scenario(cfg, workers=1)) == fingerprint(engine.run_scenario(cfg, workers=3))


def test_merge_order_and_grouping(pulsed_shards):
    p = pulsed_shards
    whole = engine.merge_shards(p)
    assert fingerprint(engine.merge_shards(p[::-1])) == fingerprint(whole)
    left = engine.merge_shards(p[:2])
    right = engine.merge_shards(p[2:])
    assert fingerprint(engine.merge_shards([right, left])) == fingerprint(whole)
    nested = engine.merge_shards([p[0], engine.merge_shards([p[1], engine.merge_shards(p[2:])])])
    assert fingerprint(nested) == fingerprint(whole)
    assert whole.stats and not left.stats
    assert whole.shards == (0, 1, 2, 3)


def test_single_shard_merge_is_identity():
    cfg = short("paper_pulsed_260ps_jitter50", 0.2, g2=False)
    s = engine.run_shard(cfg, 0)
    m = engine.merge_shards([s])
    np.testing.assert_array_equal(m.correlation.counts, s.correlation.counts)
    np.testing.assert_array_equal(m.tcspc.counts, s.tcspc.counts)


def test_merge_rejects_mismatches(pulsed_cfg, pulsed_shards):
    with pytest.raises(ConfigMismatch):
        engine.merge_shards([pulsed_shards[0], pulsed_shards[2]])
    other = replace(pulsed_cfg, analysis=replace(pulsed_cfg.analysis, tcspc_bin_ps=32.0))
    s1 = engine.run_shard(other, 1)
    with pytest.raises(ConfigMismatch):
        engine.merge_shards([pulsed_shards[0], s1])
    s1 = engine.run_shard(replace(pulsed_cfg, seed=1), 1)
    with pytest.raises(ConfigMismatch):
        engine.merge_shards([pulsed_shards[0], s1])
    with pytest.raises(ConfigMismatch):
        engine.merge_shards([])


def test_shard_count_does_not_change_distribution(pulsed_cfg, pulsed_shards):
    four = engine.merge_shards(pulsed_shards)
    one = engine.run_scenario(replace(pulsed_cfg, shards=1))
    assert four.counters["triggers"] == one.counters["triggers"]
    # two-sample homogeneity of the TCSPC histograms, rebinned to 512 ps
    a = four.tcspc.counts[:2496].reshape(-1, 32).sum(1)
    b = one.tcspc.counts[:2496].reshape(-1, 32).sum(1)
    keep = (a + b) > 20
    assert stats.chi2_contingency(np.vstack([a[keep], b[keep]]))[1] > 1e-3
    for s in (four, one):
        assert abs(s.stats["mc_efficiency"]["z"]) < 4
    assert abs(four.stats["g2"]["g2_zero"] - one.stats["g2"]["g2_zero"]) < 4 * math.hypot(
        four.stats["g2"]["g2_zero_err"], one.stats["g2"]["g2_zero_err"])


def test_chunking_conserves_triggers():
    cfg = short("paper_pulsed_260ps_jitter50", 0.3, chunk=1_000_003, g2=False)
    s = engine.run_scenario(cfg)
    assert s.counters["triggers"] == cfg.timing.n_triggers
    assert abs(s.stats["mc_efficiency"]["z"]) < 4


@pytest.mark.parametrize("name", bundled_scenarios())
def test_monte_carlo_efficiency_matches_quadrature(name):
    s = engine.run_scenario(short(name, 1.0, **QUIET))
    for key in ("mc_efficiency", "mc_offwindow_efficiency"):
        r = s.stats[key]
        if r["n"] == 0:
            continue
        assert abs(r["z"]) < 3, (key, r)


def test_zero_collection_is_flat_and_uncorrelated():
    s = engine.run_scenario(short("zero_collection", 20.0))
    full = s.tcspc.counts[:-1]
    chi2 = float(np.sum((full - full.mean()) ** 2 / full.mean()))
    assert stats.chi2.sf(chi2, full.size - 1) > 1e-3
    g = s.stats["g2"]
    assert g["g2_zero"] == pytest.approx(1.0, abs=4 * g["g2_zero_err"])
    assert s.counters["collected_gated"] == 0


def test_cw_run_statistics():
    s = engine.run_scenario(short("paper_cw", 5.0))
    st_ = s.stats
    assert st_["net_efficiency"] == 0.75
    assert st_["rates_per_s"]["converted_analytic"] == pytest.approx(50e6 * 1e-3 * 0.75)
    assert abs(st_["rates_per_s"]["converted"] - 37500) < 4 * math.sqrt(37500 / 5)
    assert set(st_) >= {"g2", "lifetime", "mc_efficiency"}


def test_resolve_calibrations():
    r = engine.resolve(load_scenario("paper_pulsed_500ps_g2"))
    assert r.prediction.g2_zero == pytest.approx(0.45, abs=1e-9)
    assert r.model.raman_coeff == pytest.approx(132.29166666666663)
    assert r.window_fraction == pytest.approx(77 * 256 / 20000)
    r = engine.resolve(load_scenario("paper_pulsed_260ps_jitter50"))
    assert r.train.delay == pytest.approx(237.46, abs=0.05)
    assert r.net_efficiency == pytest.approx(0.16873, abs=1e-5)


def test_empty_sweep_and_qpm_point():
    cfg = short("paper_delay_sweep", 0.1)
    res = engine.sweep(cfg, "delta_t", [])
    assert res.runs == [] and res.fit is None
    with pytest.raises(QpmViolation, match="sweep point 1"):
        engine.sweep(cfg, "tau_mod", [260.0, 5.0])
    with pytest.raises(ConfigError):
        engine.sweep(cfg, "power", [1.0])


def test_width_sweep_outputs(tmp_path):
    cfg = short("paper_efficiency_curve", 0.2, **QUIET)
    res = engine.sweep(cfg, "tau_mod", [260.0, 1250.0])
    rows = res.rows()
    assert rows[0]["net_efficiency"] < rows[1]["net_efficiency"]
    assert res.backgrounds == [None, None]
    engine.write_sweep(res, tmp_path)
    header = (tmp_path / "sweep_curve.csv").read_text().splitlines()[0]
    assert header.startswith("tau_mod_ps,pump_delay_ps,net_efficiency")
    assert (tmp_path / "point_001" / "summary.json").is_file()


def test_json_output_embeds_counts(tmp_path):
    s = engine.run_scenario(short("paper_pulsed_260ps_jitter50", 0.2, g2=False))
    engine.write_run(s, tmp_path, "json")
    d = json.loads((tmp_path / "summary.json").read_text())
    assert sum(d["histograms"]["tcspc"]["counts_a"]) == s.tcspc_a.total
    assert not (tmp_path / "histogram_tcspc.csv").exists()
    assert "wall_clock" not in json.dumps(d)
    with pytest.raises(ConfigError):
        engine.write_run(s, tmp_path, "xml")


# -- scenario files ---------------------------------------------------------------

BASE = {"schema_version": 1, "name": "t", "timing": {"sim_duration_ps": 1e9}}


def test_loader_rejects_bad_documents(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        from_dict({**BASE, "colour": 1})
    with pytest.raises(ConfigError, match="unknown key pump.widht"):
        from_dict({**BASE, "pump": {"widht": 3}})
    with pytest.raises(ConfigError, match="schema_version"):
        from_dict({"name": "t"})
    with pytest.raises(ConfigError):
        from_dict({**BASE, "schema_version": 2})
    with pytest.raises(ConfigError):
        from_dict({**BASE, "detectors": {"a": {}}})
    with pytest.raises(ConfigError):
        from_dict({**BASE, "shards": 0})
    with pytest.raises(ConfigError):
        load_scenario("no_such_scenario")
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: [1\n")
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_loader_reads_plain_exponents(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("schema_version: 1\nname: s\ntiming:\n  sim_duration_ps: 6e14\n"
                 "detectors:\n  a: {efficiency: 0.5}\n  b: {efficiency: 0.7}\n")
    cfg = load_scenario(p)
    assert cfg.timing.sim_duration == 6e14
    assert cfg.detectors[0].efficiency == 0.5 and cfg.detectors[1].efficiency == 0.7


def test_fingerprint_ignores_shards():
    cfg = load_scenario("paper_cw")
    assert replace(cfg, shards=8).fingerprint() == cfg.fingerprint()
    assert replace(cfg, seed=1).fingerprint() != cfg.fingerprint()


def test_all_bundled_scenarios_resolve():
    for name in bundled_scenarios():
        r = engine.resolve(load_scenario(name))
        assert 0 <= r.net_efficiency <= 0.75
