"""Effective-rate accounting, exhaustive and genie baselines, BA success."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dataset import narrow_beam_rate
from .scene import ChannelRealization, ScenarioConfig

RESULT_COLUMNS = ["scheme", "n_train", "seed", "se_ave_eff", "ba_success", "overhead_reals", "T_r_ms"]


def overhead_factor(T_r: float, T: float) -> float:
    """``1 - T_r/T`` clamped at zero."""
    if T <= 0:
        raise ValueError("tracking period must be positive")
    return max(0.0, 1.0 - T_r / T)


def training_time(scheme: str, n_bs: int, n_beams: int, n_probes: int, beam_time: float) -> float:
    """Beam-training time ``T_r`` of a scheme family (same unit as ``beam_time``).

    ``exhaustive_dl``: every BS sweeps all M beams in turn. ``exhaustive_ul``:
    the user sends M pilots that all BSs hear at once. ``user``: each BS sends
    its N_W probes, then the user reports one index per BS. ``bs``: N_W uplink
    probes heard by all BSs plus one beam-index delivery slot.
    """
    table = {
        "genie": 0.0,
        "exhaustive_dl": n_bs * n_beams * beam_time,
        "exhaustive_ul": n_beams * beam_time,
        "user": n_bs * n_probes * beam_time + n_bs * beam_time,
        "bs": (n_probes + 1) * beam_time,
    }
    if scheme not in table:
        raise ValueError(f"unknown scheme family {scheme!r}")
    return table[scheme]


def _check_noise(noise_var):
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")


def subcarrier_se(h, f, p, noise_var) -> np.ndarray:
    """``log2(1 + p_k/sigma^2 * sum_b |h_{b,k}^H f_b|^2)`` per subcarrier.

    ``h`` is ``(B, K, M_ant)`` and ``f`` is ``(B, M_ant)``.
    """
    _check_noise(noise_var)
    h = np.asarray(h)
    f = np.asarray(f)
    gain = np.sum(np.abs(np.einsum("bkm,bm->bk", h.conj(), f)) ** 2, axis=0)
    return np.log2(1 + np.asarray(p) * gain / noise_var)


def effective_rate(h, f, p, noise_var, T_r, T, bandwidth, n_subcarriers) -> float:
    """Effective rate of one user in bit/s over its allocated subcarriers."""
    se = subcarrier_se(h, f, p, noise_var)
    return overhead_factor(T_r, T) * bandwidth / n_subcarriers * float(np.sum(se))


def se_ave_eff(per_user_se: Sequence, T_r: float, T: float) -> float:
    """Mean over users of their subcarrier-averaged spectral efficiency, times ``1 - T_r/T``.

    ``per_user_se[u]`` holds the per-subcarrier ``log2(1 + SNR)`` terms of user u.
    """
    if len(per_user_se) == 0:
        raise ValueError("no users to average over")
    means = [float(np.mean(s)) for s in per_user_se]
    return overhead_factor(T_r, T) * float(np.mean(means))


def exhaustive_search(narrow, group_sizes, p_bar, noise_var) -> np.ndarray:
    """Per-BS argmax of the narrow-beam rate.

    ``narrow`` has shape ``(..., B, M, G)``; returns ``(..., B)`` 0-based indices.
    """
    r = np.asarray(narrow)
    if r.ndim < 3 or not np.all(np.isfinite(r)):
        raise ValueError("incomplete narrow-beam response table")
    return np.argmax(narrow_beam_rate(r, group_sizes, p_bar, noise_var), axis=-1)


def genie_indices(noiseless_rates) -> np.ndarray:
    """Beams maximizing the noiseless narrow-beam rate, ``(N, B, M)`` -> ``(N, B)``."""
    return np.argmax(np.asarray(noiseless_rates), axis=-1)


def ba_success_rate(pred, genie) -> float:
    """Fraction of points where every BS picks the genie beam."""
    pred = np.asarray(pred)
    genie = np.asarray(genie)
    if pred.shape != genie.shape:
        raise ValueError(f"prediction shape {pred.shape} != genie shape {genie.shape}")
    if pred.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(np.all(pred == genie, axis=-1)))


class GainTable:
    """``|h_{b,k}^H c_i|^2`` for every test point, BS, subcarrier and codebook beam.

    Scoring any index choice is then a gather and a sum.
    """

    def __init__(self, scene: Sequence[ChannelRealization], cfg: ScenarioConfig, codebook):
        self.cfg = cfg
        g = np.empty((len(scene), cfg.n_bs, cfg.subcarriers_per_user, codebook.shape[1]))
        for n, real in enumerate(scene):
            g[n] = np.abs(real.channels(cfg).conj() @ codebook) ** 2
        self.gains = g

    def __len__(self):
        return len(self.gains)

    def subcarrier_se(self, idx) -> np.ndarray:
        """``(N, K_u)`` log terms for indices ``idx`` of shape ``(N, B)``."""
        idx = np.asarray(idx)
        sel = np.take_along_axis(self.gains, idx[:, :, None, None], axis=3)[..., 0]
        cfg = self.cfg
        return np.log2(1 + cfg.data_power * sel.sum(axis=1) / cfg.noise_var)

    def point_se(self, idx, T_r: float) -> np.ndarray:
        """Per-point effective spectral efficiency (bps/Hz)."""
        return overhead_factor(T_r, self.cfg.tracking_period_ms) * self.subcarrier_se(idx).mean(axis=1)

    def se_ave_eff(self, idx, T_r: float) -> float:
        return se_ave_eff(list(self.subcarrier_se(idx)), T_r, self.cfg.tracking_period_ms)


@dataclass
class SchemeResult:
    scheme: str
    n_train: int
    seed: int
    indices: np.ndarray | None
    T_r_ms: float
    se_ave_eff: float
    ba_success: float
    overhead_reals: Fraction | int
    point_se: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None
    sweep: tuple = ("none", None)

    def row(self) -> list:
        return [self.scheme, self.n_train, self.seed, _fmt(self.se_ave_eff), _fmt(self.ba_success),
                fmt_reals(self.overhead_reals), _fmt(self.T_r_ms)]


def _fmt(v: float) -> str:
    return "nan" if v != v else format(v, ".10g")


def fmt_reals(v) -> str:
    """Exact integer when the count is whole, else a decimal."""
    v = Fraction(v)
    return str(v.numerator) if v.denominator == 1 else format(float(v), ".10g")


def score(scheme: str, n_train: int, seed: int, idx, T_r: float, table: GainTable, genie,
          overhead_reals: int = 0) -> SchemeResult:
    ps = table.point_se(idx, T_r)
    return SchemeResult(scheme, n_train, seed, np.asarray(idx), T_r, float(ps.mean()),
                        ba_success_rate(idx, genie), Fraction(overhead_reals), ps)


def failed(scheme: str, n_train: int, seed: int, err: Exception) -> SchemeResult:
    return SchemeResult(scheme, n_train, seed, None, float("nan"), float("nan"), float("nan"), 0,
                        error=f"{type(err).__name__}: {err}")


def write_results_csv(path, results: Sequence[SchemeResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow(r.row())


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows
