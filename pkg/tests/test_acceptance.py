"""Acceptance suite: one PASS/FAIL line per criterion, at the agreed tolerances.

Run alone with ``pytest tests/test_acceptance.py -v`` (the PASS/FAIL lines
are printed past pytest's capture), or ``python tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from cfbeam import oracles, scene
from cfbeam import consensus as cs
from cfbeam import dataset as dsm
from cfbeam import evaluation as ev
from cfbeam import experiment as ex
from cfbeam import split as sp
from cfbeam.bl import BLArchitecture
from cfbeam.consensus import OverheadLedger
from cfbeam.schemes import SchemeParams, run_scheme

SMALL = dict(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, elapsed, budget_s):
        ok = ok and elapsed < budget_s
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail} [{elapsed:.1f}s of {budget_s}s]")
        assert ok, detail
    return emit


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# 1 -----------------------------------------------------------------------------------------

def test_c1_incremental_inverses_match_dense(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(101)
    rho = 0.1
    worst_rows = worst_nodes = 0.0
    for _ in range(100):
        D, N = int(g.integers(2, 81)), int(g.integers(1, 200))
        A = g.standard_normal((N, D))
        C = np.linalg.inv(A.T @ A + rho * np.eye(D))
        A_new = g.standard_normal((int(g.integers(1, 11)), D))
        S = np.vstack([A, A_new])
        C_S = cs.inc_update_samples(C, A_new)
        worst_rows = max(worst_rows, rel(C_S, np.linalg.inv(S.T @ S + rho * np.eye(D))))
        H = np.tanh(g.standard_normal((len(S), int(g.integers(1, 11)))))
        F = np.hstack([S, H])
        C_SE = cs.inc_add_nodes(C_S, S, H, rho)
        worst_nodes = max(worst_nodes, rel(C_SE, np.linalg.inv(F.T @ F + rho * np.eye(F.shape[1]))))
    worst = max(worst_rows, worst_nodes)
    report(1, worst <= 1e-8, f"worst rel error rows {worst_rows:.2e}, nodes {worst_nodes:.2e} (tol 1e-8)",
           time.perf_counter() - t0, 10)


# 2 -----------------------------------------------------------------------------------------

def test_c2_incremental_equals_retraining(report):
    t0 = time.perf_counter()
    cfg = scene.ScenarioConfig(**SMALL)
    sc = scene.gen_scene(cfg, 900, seed=12)
    ds = dsm.build_samples(sc, cfg, scene.make_probing_beams(cfg), scene.dft_codebook(8, 4), "user")
    train, test = dsm.split_train_test(ds, 600 / 900, seed=12)
    base_all, inc_all = train.head(500), train.subset(np.arange(500, 600))
    base = [base_all.for_user(u) for u in range(2)]
    inc = [inc_all.for_user(u) for u in range(2)]
    arch = BLArchitecture(enhance_nodes=500, lam=1.0)
    norm = dsm.Standardizer.fit(base_all.X)
    m0 = cs.train_collaborative([b.X for b in base], [b.Y for b in base], arch, 3, 0.1, 10, normalizer=norm)
    m_inc = cs.algorithm1(m0, [cs.IncrementalBatch(p.X, p.Y, (1, 50)) for p in inc], 10)
    m_new = cs.train_collaborative([np.vstack([b.X, p.X]) for b, p in zip(base, inc)],
                                   [np.vstack([b.Y, p.Y]) for b, p in zip(base, inc)],
                                   arch, 3, 0.1, 10, normalizer=norm, layers=m_inc.layers)
    err = max(rel(m_inc.W[u], m_new.W[u]) for u in range(2))
    same = all(np.array_equal(m_inc.model(u).predict(test.X), m_new.model(u).predict(test.X)) for u in range(2))
    report(2, err <= 1e-8 and same,
           f"N=500+100, D={m_inc.A[0].shape[1]}: max rel W gap {err:.2e} (tol 1e-8), "
           f"predictions on {len(test)} test points identical: {same}",
           time.perf_counter() - t0, 60)


# 3 -----------------------------------------------------------------------------------------

def test_c3_consensus_reaches_stacked_solution(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(103)
    lam, rho = 2.0 ** -3, 0.1
    worst = 0.0
    for _ in range(40):
        U, N, D = int(g.integers(1, 5)), int(g.integers(20, 301)), int(g.integers(2, 81))
        # stacked Gram near identity; see the decisions ledger on scale
        A = [g.standard_normal((N, D)) / math.sqrt(N * U) for _ in range(U)]
        Y = [g.standard_normal((N, 8)) for _ in range(U)]
        C = [cs.gram_inverse(a, rho) for a in A]
        st = cs.run_consensus(C, [a.T @ y for a, y in zip(A, Y)], rho, lam, 100)
        worst = max(worst, rel(st.W0, cs.centralized_solution(A, Y, lam)))
    report(3, worst <= 1e-4, f"40 instances, 100 rounds: worst rel error {worst:.2e} (tol 1e-4)",
           time.perf_counter() - t0, 30)


# 4 -----------------------------------------------------------------------------------------

def test_c4_split_training_reaches_central_objective(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(104)
    lam, rho = 2.0 ** -3, 0.1
    worst = 0.0
    for _ in range(30):
        B, N = int(g.integers(1, 4)), int(g.integers(20, 301))
        A = [g.standard_normal((N, int(g.integers(2, 81)))) / math.sqrt(N) for _ in range(B)]
        Y = g.standard_normal((N, 8))
        st = sp.run_split(A, Y, rho, lam, 50)
        f = sp.split_objective(A, st.W, Y, lam)
        fc = sp.split_objective(A, sp.central_split_solution(A, Y, lam), Y, lam)
        worst = max(worst, (f - fc) / fc)
    report(4, worst <= 0.01, f"30 instances, 50 rounds: worst objective gap {worst:.2e} (tol 1e-2)",
           time.perf_counter() - t0, 30)


# 5 -----------------------------------------------------------------------------------------

def test_c5_ledgers_equal_closed_forms(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(105)
    bad = []
    for mode in cs.MODES:
        for _ in range(5):
            U, D, O, t = int(g.integers(1, 5)), int(g.integers(2, 30)), int(g.integers(1, 10)), int(g.integers(0, 6))
            A = [g.standard_normal((20, D)) for _ in range(U)]
            Y = [g.standard_normal((20, O)) for _ in range(U)]
            led = OverheadLedger(mode)
            cs.run_consensus([cs.gram_inverse(a, 0.1) for a in A], [a.T @ y for a, y in zip(A, Y)],
                             0.1, 0.1, t, A, Y, ledger=led)
            if led.per_user(U) != cs.overhead_user_side(mode, U, D, O, t):
                bad.append((mode, U, D, O, t))
    for _ in range(5):
        B, N, M, t = int(g.integers(1, 4)), int(g.integers(5, 60)), int(g.integers(2, 9)), int(g.integers(0, 5))
        Nb = int(g.integers(1, M + 1))
        X = [g.standard_normal((N, 6)) for _ in range(B)]
        Y = np.zeros((N, B * M))
        Y[np.arange(N), g.integers(0, B * M, N)] = 1
        tp = sp.InProcessTransport(OverheadLedger("fronthaul"))
        m = sp.algorithm2(X, Y, BLArchitecture(n_feature_groups=2, feature_nodes=5, enhance_nodes=10),
                          B, 1, t_max=t, budget=Nb, transport=tp)
        if any(sp.link_overhead(tp.ledger, b) != sp.overhead_bs_side(N, Nb, M, t) for b in range(B)):
            bad.append(("fronthaul", B, N, M, Nb, t))
        led = OverheadLedger("fronthaul")
        m.predict([x[0] for x in X], ledger=led)
        if any(led.node_sent(f"bs{b}", "online") != B * M for b in range(B)):
            bad.append(("online", B, M))
    example = sp.overhead_bs_side(1000, 10, 32, 5)
    ok = not bad and example == 432_000
    report(5, ok, f"15 instrumented runs, mismatches {bad}; (1000, 10, 32, 5) -> {example:,} (want 432,000)",
           time.perf_counter() - t0, 5)


# 6 -----------------------------------------------------------------------------------------

def test_c6_lossless_budget_is_bitwise(report):
    t0 = time.perf_counter()
    cfg = scene.ScenarioConfig(**SMALL)
    sc = scene.gen_scene(cfg, 400, seed=16)
    ds = dsm.build_samples(sc, cfg, scene.make_probing_beams(cfg), scene.dft_codebook(8, 4), "bs")
    slices = [ds.bs_features(b) for b in range(3)]
    O = ds.Y.shape[1]
    arch = BLArchitecture(enhance_nodes=100, lam=2.0 ** -9)
    dense = sp.algorithm2(slices, ds.Y, arch, 3, 1, t_max=5)
    packed = sp.algorithm2(slices, ds.Y, arch, 3, 1, t_max=5, budget=O,
                           transport=sp.InProcessTransport(OverheadLedger("fronthaul"), serialize=True))
    same = all(np.array_equal(a, b) for a, b in zip(dense.W, packed.W)) and dense.objective == packed.objective
    report(6, same, f"N_b = O = {O}, 5 rounds through the wire format: trajectories bitwise equal: {same}",
           time.perf_counter() - t0, 30)


# 7 -----------------------------------------------------------------------------------------

def _ridge_residual(model, X, Y):
    A = model.nodes(X)
    G = A.T @ A
    G[np.diag_indices_from(G)] += model.arch.lam
    rhs = A.T @ Y
    return float(np.linalg.norm(G @ model.W_out - rhs) / np.linalg.norm(rhs))


def test_c7_linear_algebra_substrate(report):
    t0 = time.perf_counter()
    subs = {c.label: c for name in ("dft-unitarity", "steering-modulus", "channel-sum") for c in oracles.run(name)}
    cfg = scene.ScenarioConfig(**SMALL)
    sc = scene.gen_scene(cfg, 500, seed=17)
    probes, cb = scene.make_probing_beams(cfg), scene.dft_codebook(8, 4)
    user = dsm.split_train_test(dsm.build_samples(sc, cfg, probes, cb, "user"), 0.7, seed=17)
    bs = dsm.split_train_test(dsm.build_samples(sc, cfg, probes, cb, "bs"), 0.7, seed=17)
    arch = BLArchitecture(enhance_nodes=300, lam=1.0)
    worst, n_models = 0.0, 0
    tr, te = user
    out = run_scheme("FDBL", tr, te, arch, 2, SchemeParams())
    for u, m in enumerate(out.artifacts["models"]):
        p = tr.for_user(u)
        worst, n_models = max(worst, _ridge_residual(m, p.X, p.Y)), n_models + 1
    m = run_scheme("FCBL", tr, te, arch, 2, SchemeParams()).artifacts["models"][0]
    worst, n_models = max(worst, _ridge_residual(m, tr.X, tr.Y)), n_models + 1
    tr, te = bs
    arch_bs = BLArchitecture(enhance_nodes=300, lam=2.0 ** -9)
    for b, m in enumerate(run_scheme("FDBL-BS", tr, te, arch_bs, 2, SchemeParams()).artifacts["models"]):
        worst = max(worst, _ridge_residual(m, tr.bs_features(b), tr.Y[:, b * 32:(b + 1) * 32]))
        n_models += 1
    m = run_scheme("FCBL-BS", tr, te, arch_bs, 2, SchemeParams()).artifacts["models"][0]
    worst, n_models = max(worst, _ridge_residual(m, tr.X, tr.Y)), n_models + 1
    ok = all(c.ok for c in subs.values()) and worst <= 1e-8
    detail = "; ".join(f"{k} {c.error:.1e} (tol {c.tol:g})" for k, c in subs.items())
    report(7, ok, f"{detail}; ridge residual over {n_models} models {worst:.1e} (tol 1e-8)",
           time.perf_counter() - t0, 10)


# 8 -----------------------------------------------------------------------------------------

def _boot_low(diff, g, n_boot=2000, q=2.5):
    n = len(diff)
    means = np.array([diff[g.integers(0, n, n)].mean() for _ in range(n_boot)])
    return float(np.percentile(means, q))


def test_c8_scheme_ordering(report):
    t0 = time.perf_counter()
    spec = ex.ExperimentSpec(arch=ex.ArchSpec(lam_user=1.0),
                             schemes=("genie", "exhaustive_dl", "FDBL", "FCBL", "ICBL"),
                             train_sizes=(1500,), repetitions=5, n_positions=5000, seed=0)
    pts, means, acc, link = {}, {}, {}, {}
    for rep in range(spec.repetitions):
        res = ex.run_repetition(spec, rep).results
        genie = next(r.indices for r in res if r.scheme == "genie")
        for r in res:
            assert r.error is None, r.error
            pts.setdefault(r.scheme, []).append(r.point_se)
            means.setdefault(r.scheme, []).append(r.se_ave_eff)
            acc.setdefault(r.scheme, []).append(r.ba_success)
            link.setdefault(r.scheme, []).append(float(np.mean(r.indices == genie)))
    pts = {k: np.concatenate(v) for k, v in pts.items()}
    g = np.random.default_rng(108)
    chain = ("genie", "FCBL", "ICBL", "FDBL")
    lows = {(a, b): _boot_low(pts[a] - pts[b], g) for a, b in zip(chain, chain[1:])}
    ordered = all(v >= 0 for v in lows.values())
    bl_schemes = ("FDBL", "FCBL", "ICBL")
    beats = {s: np.mean(means[s]) > np.mean(means["exhaustive_dl"]) for s in bl_schemes}
    # BL must beat the downlink sweep whenever its per-link top-1 accuracy reaches 60%;
    # the unconditional check below is stronger
    required = all(beats[s] for s in bl_schemes if np.mean(link[s]) >= 0.6)
    ok = ordered and required and all(beats.values())
    se = ", ".join(f"{s} {np.mean(means[s]):.3f}" for s in ("genie",) + bl_schemes + ("exhaustive_dl",))
    ba = ", ".join(f"{s} {np.mean(link[s]):.3f}/{np.mean(acc[s]):.3f}" for s in bl_schemes)
    lo = ", ".join(f"{a}-{b} {v:+.3f}" for (a, b), v in lows.items())
    report(8, ok, f"mean SE {se}; top-1 per link/all links {ba}; bootstrap 2.5% lower bounds {lo}; "
           f"BL beats exhaustive_dl: {all(beats.values())}", time.perf_counter() - t0, 600)


# 9 -----------------------------------------------------------------------------------------

def test_c9_random_guess_calibration(report):
    t0 = time.perf_counter()
    cfg = scene.ScenarioConfig(**SMALL)
    n = 10_000
    sc = scene.gen_scene(cfg, n, seed=19)
    ds = dsm.build_samples(sc, cfg, scene.make_probing_beams(cfg), scene.dft_codebook(8, 4), noiseless=True)
    genie = ev.genie_indices(ds.rates)
    B, M = genie.shape[1], ds.n_beams
    guess = scene.stream(19, 9).integers(0, M, (n, B))
    rate = ev.ba_success_rate(guess, genie)
    p = M ** -B
    se = math.sqrt(p * (1 - p) / n)
    z = abs(rate - p) / se
    report(9, z <= 3, f"M={M}, B={B}, n={n}: success {rate:.2e} vs {p:.2e}, {z:.2f} SE (tol 3)",
           time.perf_counter() - t0, 10)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
