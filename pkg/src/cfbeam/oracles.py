"""Independent reference computations, runnable from the command line.

Each oracle recomputes a library quantity the slow, obvious way and reports
``(label, error, tolerance)`` comparisons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import consensus, split
from .evaluation import ba_success_rate, effective_rate
from .scene import ScenarioConfig, dft_codebook, gen_scene, steering_vector


@dataclass
class Comparison:
    label: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tol)


def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def dft_unitarity():
    out = []
    for r, c in [(8, 4), (4, 4), (2, 8)]:
        F = dft_codebook(r, c)
        out.append(Comparison(f"F^H F = I ({r}x{c})", float(np.abs(F.conj().T @ F - np.eye(r * c)).max()), 1e-10))
    return out


def steering_modulus():
    g = np.random.default_rng(1)
    err = max(float(np.abs(np.abs(steering_vector(t, p, 8, 4)) - 1).max())
              for t, p in g.uniform([-np.pi, 0], [np.pi, np.pi], (200, 2)))
    return [Comparison("|a_n| = 1 over 200 directions", err, 1e-12)]


def channel_sum():
    cfg = ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4)
    real = gen_scene(cfg, 3, seed=5)[2]
    H = real.channels(cfg)
    f = cfg.subcarrier_freqs(real.user)
    ref = np.zeros_like(H)
    d = cfg.antenna_spacing
    for b in range(cfg.n_bs):
        for k in range(len(f)):
            for l in range(real.n_paths):
                th, ph = real.azimuths[b, l], real.elevations[b, l]
                a = np.array([complex(math.cos(x), math.sin(x)) for x in
                              (2 * math.pi * d * (iz * math.cos(ph) + iy * math.sin(th) * math.sin(ph))
                               for iz in range(cfg.n_rows) for iy in range(cfg.n_cols))])
                ref[b, k] += real.gains[b, l] * np.exp(-2j * math.pi * f[k] * real.delays[b, l]) * a
    return [Comparison("channel vs per-path sum", _rel(H, ref), 1e-10)]


def woodbury():
    g = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        D, n, k = g.integers(2, 41), g.integers(1, 60), g.integers(1, 11)
        A, Aa = g.standard_normal((n, D)), g.standard_normal((k, D))
        C = np.linalg.inv(A.T @ A + 0.1 * np.eye(D))
        S = np.vstack([A, Aa])
        worst = max(worst, _rel(consensus.inc_update_samples(C, Aa), np.linalg.inv(S.T @ S + 0.1 * np.eye(D))))
    return [Comparison("new-sample inverse vs dense inverse (50 trials)", worst, 1e-8)]


def block_inverse():
    g = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        D, n, e = g.integers(2, 41), g.integers(1, 60), g.integers(1, 11)
        A, H = g.standard_normal((n, D)), g.standard_normal((n, e))
        C = np.linalg.inv(A.T @ A + 0.1 * np.eye(D))
        F = np.hstack([A, H])
        worst = max(worst, _rel(consensus.inc_add_nodes(C, A, H, 0.1), np.linalg.inv(F.T @ F + 0.1 * np.eye(D + e))))
    return [Comparison("new-node inverse vs dense inverse (50 trials)", worst, 1e-8)]


def consensus_central():
    g = np.random.default_rng(4)
    out = []
    for U in (1, 3):
        A = [g.standard_normal((60, 20)) / np.sqrt(60 * U) for _ in range(U)]
        Y = [g.standard_normal((60, 4)) for _ in range(U)]
        C = [consensus.gram_inverse(a, 0.1) for a in A]
        st = consensus.run_consensus(C, [a.T @ y for a, y in zip(A, Y)], 0.1, 0.125, 100)
        out.append(Comparison(f"W_0 vs stacked ridge, U={U}",
                              _rel(st.W0, consensus.centralized_solution(A, Y, 0.125)), 1e-4))
    return out


def split_central():
    g = np.random.default_rng(5)
    A = [g.standard_normal((120, d)) / np.sqrt(120) for d in (20, 30, 25)]
    Y = g.standard_normal((120, 6))
    st = split.run_split(A, Y, 0.1, 0.125, 50)
    f = split.split_objective(A, st.W, Y, 0.125)
    fc = split.split_objective(A, split.central_split_solution(A, Y, 0.125), Y, 0.125)
    return [Comparison("split objective gap after 50 rounds", (f - fc) / fc, 0.01)]


def mvs_best_sparse():
    g = np.random.default_rng(6)
    M = g.standard_normal((100, 20))
    got = split.mvs_decompress(split.mvs_compress(M, 5))
    ref = np.zeros_like(M)
    for n, row in enumerate(M):
        keep = sorted(range(20), key=lambda j: (-abs(row[j]), j))[:5]
        ref[n, keep] = row[keep]
    return [Comparison("top-5 per row vs sorted brute force", float(np.abs(got - ref).max()), 0.0)]


def effective_rate_sum():
    g = np.random.default_rng(7)
    B, K, M = 2, 6, 8
    h = g.standard_normal((B, K, M)) + 1j * g.standard_normal((B, K, M))
    f = g.standard_normal((B, M)) + 1j * g.standard_normal((B, M))
    got = effective_rate(h, f, 0.3, 0.05, 10.0, 96.0, 500e6, 1024)
    ref = 0.0
    for k in range(K):
        gain = sum(abs(sum(h[b, k, m].conjugate() * f[b, m] for m in range(M))) ** 2 for b in range(B))
        ref += math.log2(1 + 0.3 * gain / 0.05)
    ref *= (1 - 10.0 / 96.0) * 500e6 / 1024
    return [Comparison("effective rate vs scalar loop", abs(got - ref) / ref, 1e-12)]


def random_guess():
    g = np.random.default_rng(8)
    n, B, M = 100_000, 2, 4
    genie = g.integers(0, M, (n, B))
    rate = ba_success_rate(g.integers(0, M, (n, B)), genie)
    p = M ** -B
    se = math.sqrt(p * (1 - p) / n)
    return [Comparison("uniform guessing vs M^-B (in standard errors)", abs(rate - p) / se, 3.0)]


REGISTRY: dict[str, Callable[[], list]] = {
    "dft-unitarity": dft_unitarity,
    "steering-modulus": steering_modulus,
    "channel-sum": channel_sum,
    "woodbury": woodbury,
    "block-inverse": block_inverse,
    "consensus-central": consensus_central,
    "split-central": split_central,
    "mvs-best-sparse": mvs_best_sparse,
    "effective-rate": effective_rate_sum,
    "random-guess": random_guess,
}


def run(name: str) -> list[Comparison]:
    if name == "all":
        return [c for fn in REGISTRY.values() for c in fn()]
    if name not in REGISTRY:
        raise KeyError(f"unknown oracle {name!r}; choose from {sorted(REGISTRY)} or 'all'")
    return REGISTRY[name]()
