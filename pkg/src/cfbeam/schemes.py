"""Training-and-prediction runners for every beam-alignment scheme.

Each runner takes train/test :class:`Dataset` splits and returns the
predicted ``(N_test, B)`` indices plus the communication overhead the
scheme spends (reals per user on the user side, per BS link on the BS side).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import bl, consensus, split
from .dataset import Dataset, Standardizer

USER_SCHEMES = ("FDBL", "FCBL", "CBL", "ICBL")
BS_SCHEMES = ("FDBL-BS", "FCBL-BS", "CBL-BS")
BASELINES = ("genie", "exhaustive_dl", "exhaustive_ul")
ALL_SCHEMES = BASELINES + USER_SCHEMES + BS_SCHEMES


@dataclass(frozen=True)
class SchemeParams:
    rho: float = 0.1
    t_max: int = 10
    budget: int | None = None  # MVS N_b for CBL-BS; None sends dense matrices
    mode: str = "D2D"
    inc_fraction: float = 0.2  # ICBL: share of each user's samples that arrive incrementally
    node_add: tuple[int, int] | None = None  # ICBL: (groups, nodes) added with the new samples


@dataclass
class Outcome:
    indices: np.ndarray
    overhead: Fraction | int
    artifacts: dict


def _per_user(train: Dataset, n_users: int):
    parts = [train.for_user(u) for u in range(n_users)]
    empty = [u for u, p in enumerate(parts) if len(p) == 0]
    if empty:
        raise ValueError(f"users {empty} have no training samples")
    return parts


def _predict_owned(test: Dataset, n_users: int, predictor) -> np.ndarray:
    out = np.zeros((len(test), test.n_bs), dtype=int)
    for u in range(n_users):
        rows = np.flatnonzero(test.owners == u)
        if len(rows):
            out[rows] = predictor(u, test.X[rows])
    return out


def run_fdbl(train: Dataset, test: Dataset, arch: bl.BLArchitecture, n_users: int) -> Outcome:
    """Every user trains alone on its own samples."""
    models = [bl.fit(p.X, p.Y, arch, train.n_bs) for p in _per_user(train, n_users)]
    idx = _predict_owned(test, n_users, lambda u, X: models[u].predict(X))
    return Outcome(idx, 0, {"models": models})


def run_fcbl(train: Dataset, test: Dataset, arch: bl.BLArchitecture, n_users: int) -> Outcome:
    """One model on the pooled samples of all users (raw data shipped to one node)."""
    model = bl.fit(train.X, train.Y, arch, train.n_bs)
    # every user ships its features and labels once
    overhead = Fraction(train.X.size + train.Y.size, n_users)
    return Outcome(model.predict(test.X), overhead, {"models": [model]})


def run_cbl(train: Dataset, test: Dataset, arch: bl.BLArchitecture, n_users: int,
            params: SchemeParams) -> Outcome:
    parts = _per_user(train, n_users)
    ledger = consensus.OverheadLedger(params.mode)
    m = consensus.train_collaborative([p.X for p in parts], [p.Y for p in parts], arch, train.n_bs,
                                      params.rho, params.t_max, ledger=ledger)
    idx = _predict_owned(test, n_users, lambda u, X: consensus.online_predict_user(X, m, u, ledger))
    return Outcome(idx, ledger.per_user(n_users), {"model": m, "ledger": ledger})


def icbl_batches(parts, inc_fraction: float):
    """Cut every user's samples into a base block and an incremental batch."""
    base, inc = [], []
    for p in parts:
        n_inc = int(round(inc_fraction * len(p)))
        n_base = len(p) - n_inc
        if n_base < 1:
            raise ValueError("incremental fraction leaves a user without base samples")
        base.append(p.subset(np.arange(n_base)))
        inc.append(p.subset(np.arange(n_base, len(p))))
    return base, inc


def run_icbl(train: Dataset, test: Dataset, arch: bl.BLArchitecture, n_users: int,
             params: SchemeParams) -> Outcome:
    """Collaborative training on the base blocks, then the incremental update."""
    parts = _per_user(train, n_users)
    base, inc = icbl_batches(parts, params.inc_fraction)
    ledger = consensus.OverheadLedger(params.mode)
    norm = Standardizer.fit(np.vstack([b.X for b in base]))
    m0 = consensus.train_collaborative([b.X for b in base], [b.Y for b in base], arch, train.n_bs,
                                       params.rho, params.t_max, normalizer=norm, ledger=ledger)
    batches = [consensus.IncrementalBatch(p.X, p.Y, params.node_add) for p in inc]
    m = consensus.algorithm1(m0, batches, params.t_max, ledger=ledger)
    idx = _predict_owned(test, n_users, lambda u, X: consensus.online_predict_user(X, m, u, ledger))
    return Outcome(idx, ledger.per_user(n_users), {"model": m, "base_model": m0, "ledger": ledger})


def _bs_labels(ds: Dataset, b: int) -> np.ndarray:
    m = ds.n_beams
    return ds.Y[:, b * m:(b + 1) * m]


def run_fdbl_bs(train: Dataset, test: Dataset, arch: bl.BLArchitecture) -> Outcome:
    """Every BS trains alone on its own uplink slice and its own beam labels."""
    idx = np.zeros((len(test), train.n_bs), dtype=int)
    models = []
    for b in range(train.n_bs):
        mdl = bl.fit(train.bs_features(b), _bs_labels(train, b), arch, 1, key=b)
        idx[:, b] = mdl.predict(test.bs_features(b))[:, 0]
        models.append(mdl)
    return Outcome(idx, 0, {"models": models})


def run_fcbl_bs(train: Dataset, test: Dataset, arch: bl.BLArchitecture) -> Outcome:
    """The CU trains one model on the concatenated uplink slices of all BSs."""
    model = bl.fit(train.X, train.Y, arch, train.n_bs)
    d_b = train.bs_features(0).shape[1]
    return Outcome(model.predict(test.X), len(train) * (d_b + train.n_beams), {"models": [model]})


def run_cbl_bs(train: Dataset, test: Dataset, arch: bl.BLArchitecture, params: SchemeParams) -> Outcome:
    transport = split.InProcessTransport()
    slices = [train.bs_features(b) for b in range(train.n_bs)]
    m = split.algorithm2(slices, train.Y, arch, train.n_bs, train.n_probes, params.rho, arch.lam,
                         params.t_max, params.budget, transport=transport)
    idx = m.predict([test.bs_features(b) for b in range(train.n_bs)])
    return Outcome(idx, split.link_overhead(transport.ledger, 0),
                   {"model": m, "ledger": transport.ledger, "transport": transport})


def run_scheme(name: str, train: Dataset, test: Dataset, arch: bl.BLArchitecture, n_users: int,
               params: SchemeParams) -> Outcome:
    if name == "FDBL":
        return run_fdbl(train, test, arch, n_users)
    if name == "FCBL":
        return run_fcbl(train, test, arch, n_users)
    if name == "CBL":
        return run_cbl(train, test, arch, n_users, params)
    if name == "ICBL":
        return run_icbl(train, test, arch, n_users, params)
    if name == "FDBL-BS":
        return run_fdbl_bs(train, test, arch)
    if name == "FCBL-BS":
        return run_fcbl_bs(train, test, arch)
    if name == "CBL-BS":
        return run_cbl_bs(train, test, arch, params)
    raise ValueError(f"unknown scheme {name!r}")
