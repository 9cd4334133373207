import math
from fractions import Fraction

import numpy as np
import pytest

from cfbeam import dataset as dsm
from cfbeam import evaluation as ev
from cfbeam import scene
from cfbeam.scene import ScenarioConfig


# --- timing --------------------------------------------------------------------------------

def test_training_times_at_defaults():
    Tb = 0.48
    assert ev.training_time("exhaustive_dl", 3, 32, 1, Tb) == pytest.approx(46.08, abs=1e-12)
    assert ev.training_time("exhaustive_ul", 3, 32, 1, Tb) == pytest.approx(15.36, abs=1e-12)
    assert ev.training_time("user", 3, 32, 1, Tb) == pytest.approx(6 * Tb, abs=1e-12)
    assert ev.training_time("bs", 3, 32, 1, Tb) == pytest.approx(2 * Tb, abs=1e-12)
    assert ev.training_time("genie", 3, 32, 1, Tb) == 0.0
    with pytest.raises(ValueError):
        ev.training_time("oracle", 3, 32, 1, Tb)


def test_overhead_ordering_and_factors():
    t = {s: ev.training_time(s, 3, 32, 1, 0.48) for s in ("user", "exhaustive_ul", "exhaustive_dl")}
    assert t["user"] < t["exhaustive_ul"] < t["exhaustive_dl"]
    assert ev.overhead_factor(46.08, 96) == pytest.approx(0.52)
    assert ev.overhead_factor(t["user"], 96) >= 0.97
    assert ev.overhead_factor(200, 96) == 0.0
    with pytest.raises(ValueError):
        ev.overhead_factor(1, 0)


# --- rates ------------------------------------------------------------------------------------

def test_effective_rate_zero_when_training_fills_period():
    h = np.ones((1, 2, 4), dtype=complex)
    f = np.ones((1, 4), dtype=complex)
    assert ev.effective_rate(h, f, 1.0, 1.0, 96, 96, 1e6, 64) == 0.0


def test_effective_rate_closed_form():
    h = np.array([[[math.sqrt(3) + 0j]]])
    f = np.array([[1.0 + 0j]])
    assert ev.effective_rate(h, f, 1.0, 1.0, 0.0, 96, 1e6, 64) == pytest.approx(1e6 / 64 * 2, rel=1e-15)


def test_effective_rate_matches_scalar_loop():
    g = np.random.default_rng(0)
    B, K, M = 3, 5, 6
    h = g.standard_normal((B, K, M)) + 1j * g.standard_normal((B, K, M))
    f = g.standard_normal((B, M)) + 1j * g.standard_normal((B, M))
    p = g.uniform(0.1, 1, K)
    got = ev.effective_rate(h, f, p, 0.3, 2.0, 96.0, 5e8, 1024)
    ref = 0.0
    for k in range(K):
        s = sum(abs(sum(h[b, k, m].conjugate() * f[b, m] for m in range(M))) ** 2 for b in range(B))
        ref += math.log2(1 + p[k] / 0.3 * s)
    ref *= (1 - 2.0 / 96.0) * 5e8 / 1024
    assert abs(got - ref) <= 1e-12 * ref


def test_noise_must_be_positive():
    with pytest.raises(ValueError):
        ev.subcarrier_se(np.ones((1, 1, 1)), np.ones((1, 1)), 1.0, 0.0)


def test_se_ave_eff_definitions():
    g = np.random.default_rng(1)
    h = g.standard_normal((1, 4, 2)) + 0j
    f = np.ones((1, 2)) + 0j
    se = ev.subcarrier_se(h, f, 1.0, 0.5)
    bw, K, Ku = 1e6, 64, 4
    rate = ev.effective_rate(h, f, 1.0, 0.5, 10, 96, bw, K)
    assert ev.se_ave_eff([se], 10, 96) == pytest.approx(rate / (bw * Ku / K), rel=1e-12)
    assert ev.se_ave_eff([se, se], 10, 96) == ev.se_ave_eff([se], 10, 96)
    with pytest.raises(ValueError):
        ev.se_ave_eff([], 0, 96)


# --- baselines and BA success -------------------------------------------------------------------

def test_exhaustive_matches_enumeration():
    g = np.random.default_rng(2)
    narrow = g.standard_normal((7, 2, 4, 3)) + 1j * g.standard_normal((7, 2, 4, 3))
    sizes = [2, 1, 3]
    got = ev.exhaustive_search(narrow, sizes, 0.5, 0.1)
    for n in range(7):
        for b in range(2):
            rates = [sum(sizes[k] * math.log2(1 + 0.5 * abs(narrow[n, b, i, k]) ** 2 / 0.1) for k in range(3))
                     for i in range(4)]
            assert got[n, b] == rates.index(max(rates))
    with pytest.raises(ValueError):
        ev.exhaustive_search(narrow[0, 0], sizes, 0.5, 0.1)
    bad = narrow.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ev.exhaustive_search(bad, sizes, 0.5, 0.1)


def test_noiseless_exhaustive_equals_genie():
    cfg = ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4)
    sc = scene.gen_scene(cfg, 20, seed=5)
    probes, cb = scene.make_probing_beams(cfg), scene.dft_codebook(8, 4)
    ds = dsm.build_samples(sc, cfg, probes, cb, noiseless=True)
    sizes = np.full(4, cfg.group_size)
    narrow = np.array([scene.measure(cfg, r, probes, cb, False, n, noiseless=True).narrow for n, r in enumerate(sc)])
    assert np.array_equal(ev.exhaustive_search(narrow, sizes, cfg.data_power, cfg.noise_var),
                          ev.genie_indices(ds.rates))


def test_ba_success_examples():
    genie = np.array([[1, 2, 3], [4, 5, 6]])
    assert ev.ba_success_rate(genie, genie) == 1.0
    wrong = genie.copy()
    wrong[:, 1] += 1
    assert ev.ba_success_rate(wrong, genie) == 0.0
    with pytest.raises(ValueError):
        ev.ba_success_rate(genie[:1], genie)
    with pytest.raises(ValueError):
        ev.ba_success_rate(np.zeros((0, 3)), np.zeros((0, 3)))


def test_random_guess_small_calibration():
    g = np.random.default_rng(3)
    n, M = 40_000, 4
    rate = ev.ba_success_rate(g.integers(0, M, (n, 2)), g.integers(0, M, (n, 2)))
    p = M ** -2
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


# --- gain table and genie dominance ---------------------------------------------------------------

@pytest.fixture(scope="module")
def one_bs():
    # one BS and one subcarrier per group: the per-BS genie maximizes the point rate exactly
    cfg = ScenarioConfig(n_bs=1, bs_positions=((0.0, 0.0, 6.0),), n_subcarriers=256,
                         subcarriers_per_user=8, groups_per_user=8)
    sc = scene.gen_scene(cfg, 60, seed=6)
    cb = scene.dft_codebook(8, 4)
    ds = dsm.build_samples(sc, cfg, scene.make_probing_beams(cfg), cb, noiseless=True)
    return cfg, sc, cb, ds


def test_gain_table_matches_direct_rate(one_bs):
    cfg, sc, cb, ds = one_bs
    table = ev.GainTable(sc, cfg, cb)
    idx = np.random.default_rng(7).integers(0, 32, (len(sc), 1))
    got = table.subcarrier_se(idx)
    for n in (0, 13, 59):
        ref = ev.subcarrier_se(sc[n].channels(cfg), cb[:, idx[n]].T, cfg.data_power, cfg.noise_var)
        np.testing.assert_allclose(got[n], ref, rtol=1e-12)
    assert table.se_ave_eff(idx, 5.0) == pytest.approx(table.point_se(idx, 5.0).mean(), rel=1e-12)


def test_genie_dominates_every_point(one_bs):
    cfg, sc, cb, ds = one_bs
    table = ev.GainTable(sc, cfg, cb)
    genie = ev.genie_indices(ds.rates)
    best = table.point_se(genie, 0.0)
    for i in range(32):
        other = table.point_se(np.full((len(sc), 1), i), 0.0)
        assert np.all(best >= other - 1e-12)
    noisy = np.random.default_rng(8).integers(0, 32, (len(sc), 1))
    assert np.all(best >= table.point_se(noisy, ev.training_time("user", 1, 32, 1, cfg.beam_time_ms)) - 1e-12)


# --- result rows --------------------------------------------------------------------------------

def test_result_csv_round_trip(tmp_path, one_bs):
    cfg, sc, cb, ds = one_bs
    table = ev.GainTable(sc, cfg, cb)
    genie = ev.genie_indices(ds.rates)
    r = ev.score("genie", 40, 0, genie, 0.0, table, genie, Fraction(7, 2))
    f = ev.failed("FDBL", 40, 0, ValueError("boom"))
    p = tmp_path / "r.csv"
    ev.write_results_csv(p, [r, f])
    rows = ev.read_results_csv(p)
    assert list(rows[0]) == ev.RESULT_COLUMNS
    assert rows[0]["ba_success"] == "1" and rows[0]["overhead_reals"] == "3.5"
    assert rows[1]["se_ave_eff"] == "nan" and f.error == "ValueError: boom"
    assert ev.fmt_reals(Fraction(432000)) == "432000"
