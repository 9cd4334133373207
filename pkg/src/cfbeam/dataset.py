"""Beam-prediction samples: probing-beam features, narrow-beam rates and labels.

Feature layout (user side) for one sample, with ``G`` subcarrier groups::

    for probe i (oldest first), for BS b, for group g: |r|, angle(r)

The BS-side slice for BS ``b`` keeps the order (probe i, group g) and is a
fixed sub-selection of the same vector, see :meth:`Dataset.bs_features`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import ChannelRealization, ScenarioConfig, measure, stream

_SPLIT_STREAM = 11


def narrow_beam_rate(responses, group_sizes, p_bar, noise_var):
    """Group-weighted narrow-beam equivalent rate in bits.

    ``sum_g |K_g| * log2(1 + p_bar_g * |r_g|^2 / noise_var)`` over the last axis
    of ``responses``; leading axes are broadcast.
    """
    r = np.asarray(responses)
    sizes = np.asarray(group_sizes, dtype=float)
    if r.shape[-1] != sizes.shape[-1]:
        raise ValueError(f"{r.shape[-1]} responses but {sizes.shape[-1]} group sizes")
    if np.any(sizes <= 0):
        raise ValueError("group sizes must be positive")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    return np.sum(sizes * np.log2(1 + np.asarray(p_bar) * np.abs(r) ** 2 / noise_var), axis=-1)


def one_hot(rates) -> np.ndarray:
    """One-hot vector at the first maximal rate."""
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("one_hot of an empty rate vector")
    out = np.zeros(r.shape[-1])
    out[int(np.argmax(r))] = 1.0
    return out


def labels_from_rates(rates: np.ndarray) -> np.ndarray:
    """Stack per-BS one-hot blocks: ``(N, B, M)`` rates -> ``(N, B*M)`` labels."""
    n, b, m = rates.shape
    y = np.zeros((n, b, m))
    idx = np.argmax(rates, axis=2)
    np.put_along_axis(y, idx[..., None], 1.0, axis=2)
    return y.reshape(n, b * m)


def features_from_table(probes: np.ndarray) -> np.ndarray:
    """Flatten probing responses ``(B, N_W, G)`` into the user-side feature layout."""
    r = np.transpose(probes, (1, 0, 2))  # (N_W, B, G)
    mag = np.abs(r)
    ang = np.angle(r)  # angle(0) == 0 by numpy convention
    return np.stack([mag, ang], axis=-1).ravel()


def bs_slice(x_user: np.ndarray, n_bs: int, n_probes: int, b: int) -> np.ndarray:
    """BS-local block of user-side feature rows (works on 1-D or 2-D input)."""
    x = np.asarray(x_user)
    lead = x.shape[:-1]
    return x.reshape(*lead, n_probes, n_bs, -1)[..., b, :].reshape(*lead, -1)


def bs_permutation(n_bs: int, n_probes: int, n_groups: int) -> np.ndarray:
    """Index array p with ``concat_b(bs features) == x_user[p]``."""
    idx = np.arange(2 * n_probes * n_bs * n_groups)
    return np.concatenate([bs_slice(idx, n_bs, n_probes, b) for b in range(n_bs)])


@dataclass
class Sample:
    sample_id: int
    owner: int
    features: np.ndarray  # user-side layout
    rates: np.ndarray  # (B, M)
    label: np.ndarray  # (B*M,)
    n_probes: int

    def bs_features(self, b: int) -> np.ndarray:
        return bs_slice(self.features, self.rates.shape[0], self.n_probes, b)


@dataclass
class Dataset:
    """Column-stacked samples; row ``n`` came from scene entry ``sample_ids[n]``."""
    X: np.ndarray
    rates: np.ndarray
    Y: np.ndarray
    sample_ids: np.ndarray
    owners: np.ndarray
    n_probes: int
    side: str = "user"
    tag: str = "all"

    def __len__(self):
        return len(self.sample_ids)

    @property
    def n_bs(self) -> int:
        return self.rates.shape[1]

    @property
    def n_beams(self) -> int:
        return self.rates.shape[2]

    def __getitem__(self, n: int) -> Sample:
        return Sample(int(self.sample_ids[n]), int(self.owners[n]), self.X[n], self.rates[n],
                      self.Y[n], self.n_probes)

    @property
    def samples(self) -> list[Sample]:
        return [self[n] for n in range(len(self))]

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.rates[idx], self.Y[idx], self.sample_ids[idx],
                       self.owners[idx], self.n_probes, self.side, self.tag if tag is None else tag)

    def for_user(self, u: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.owners == u))

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    def bs_features(self, b: int) -> np.ndarray:
        return bs_slice(self.X, self.n_bs, self.n_probes, b)

    def best_beams(self) -> np.ndarray:
        """Per-BS label indices, shape ``(N, B)``."""
        return np.argmax(self.Y.reshape(len(self), self.n_bs, self.n_beams), axis=2)


def build_samples(scene: Sequence[ChannelRealization], cfg: ScenarioConfig, probes, codebook,
                  side: str = "user", noisy_labels: bool = True, noiseless: bool = False,
                  seed: int | None = None) -> Dataset:
    """Beam-train every scene entry and assemble features, rates and labels.

    ``side='user'`` measures on the downlink, ``side='bs'`` on the uplink.
    ``noisy_labels=False`` computes the rates from noiseless narrow-beam
    responses while the features stay noisy; ``noiseless=True`` removes noise
    everywhere.
    """
    if side not in ("user", "bs"):
        raise ValueError(f"side must be 'user' or 'bs', got {side!r}")
    if len(scene) == 0:
        raise ValueError("empty scene")
    if codebook.shape != (cfg.n_antennas, cfg.n_antennas):
        raise ValueError("codebook does not match the array size")
    if len(probes) != cfg.n_bs or probes[0].shape != (cfg.n_antennas, cfg.n_probes):
        raise ValueError("probing beams do not match the scenario")
    uplink = side == "bs"
    sizes = np.full(cfg.groups_per_user, cfg.group_size)
    X, R = [], []
    for n, real in enumerate(scene):
        tab = measure(cfg, real, probes, codebook, uplink, n, noiseless=noiseless, seed=seed)
        X.append(features_from_table(tab.probes))
        narrow = tab.narrow
        if not noisy_labels and not noiseless:
            narrow = measure(cfg, real, probes, codebook, uplink, n, noiseless=True).narrow
        R.append(narrow_beam_rate(narrow, sizes, cfg.data_power, cfg.noise_var))
    rates = np.array(R)
    return Dataset(np.array(X), rates, labels_from_rates(rates), np.arange(len(scene)),
                   np.array([r.user for r in scene]), cfg.n_probes, side)


def split_train_test(ds: Dataset, frac_train: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random disjoint split; ``round(frac_train * N)`` samples go to training.

    Owners (users) are kept on every row, so ``train.for_user(u)`` yields the
    per-user parts.
    """
    if not 0 < frac_train < 1:
        raise ValueError("frac_train must lie in (0, 1)")
    n = len(ds)
    n_train = int(round(frac_train * n))
    if n_train < 1 or n - n_train < 1:
        raise ValueError(f"{n} samples cannot give both splits at least one sample")
    perm = stream(seed, _SPLIT_STREAM).permutation(n)
    return (ds.subset(np.sort(perm[:n_train]), "train"),
            ds.subset(np.sort(perm[n_train:]), "test"))


@dataclass
class Standardizer:
    """Per-feature affine map fitted on a training split."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(X.mean(axis=0), std)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def slice(self, idx) -> "Standardizer":
        return Standardizer(self.mean[idx], self.std[idx])


def write_dataset_csv(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "owner", "kind", "index", "value"])
        for n in range(len(ds)):
            sid, own = int(ds.sample_ids[n]), int(ds.owners[n])
            for kind, vec in (("feat", ds.X[n]), ("rate", ds.rates[n].ravel()), ("label", ds.Y[n])):
                for i, v in enumerate(vec):
                    w.writerow([sid, own, kind, i, format(float(v), ".17g")])


def read_dataset_csv(path, n_bs: int, n_probes: int, side: str = "user") -> Dataset:
    """Inverse of :func:`write_dataset_csv` (values round-trip bit-exactly)."""
    data: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["sample_id", "owner", "kind", "index", "value"]:
            raise ValueError("line 1: bad dataset header")
        for lineno, row in enumerate(reader, start=2):
            sid, own, kind, i, v = row
            if kind not in ("feat", "rate", "label"):
                raise ValueError(f"line {lineno}: unknown kind {kind!r}")
            rec = data.setdefault(int(sid), {"owner": int(own), "feat": {}, "rate": {}, "label": {}})
            rec[kind][int(i)] = float(v)
    ids = sorted(data)

    def vec(rec, kind):
        d = rec[kind]
        return np.array([d[i] for i in range(len(d))])

    X = np.array([vec(data[s], "feat") for s in ids])
    rates = np.array([vec(data[s], "rate") for s in ids])
    m = rates.shape[1] // n_bs
    return Dataset(X, rates.reshape(len(ids), n_bs, m), np.array([vec(data[s], "label") for s in ids]),
                   np.array(ids), np.array([data[s]["owner"] for s in ids]), n_probes, side)
