"""User-side collaborative BL training by global-variable consensus ADMM.

Every user keeps its own output weights ``W_u`` and a scaled dual ``O_u``;
the shared ``W_0`` carries the ridge penalty. Each user caches the inverse
``(A_u^T A_u + rho I)^{-1}`` once per data change; new samples and new
enhancement nodes update that inverse in place of a fresh factorization.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import linalg

from . import bl
from .dataset import Standardizer

MODES = ("D2D", "BS-relayed")


class OverheadLedger:
    """Counts of real numbers moved between nodes, split by phase."""

    def __init__(self, mode: str = "D2D"):
        self.mode = mode
        self.sent = defaultdict(lambda: defaultdict(int))
        self.received = defaultdict(lambda: defaultdict(int))

    def transfer(self, src, dsts, n_reals: int, phase: str = "train", broadcast: bool = False):
        """Record ``n_reals`` reals from ``src`` to each of ``dsts``.

        A broadcast is charged once to the sender however many nodes listen.
        """
        dsts = list(dsts)
        if not dsts:
            return
        self.sent[src][phase] += n_reals if broadcast else n_reals * len(dsts)
        for d in dsts:
            self.received[d][phase] += n_reals

    def total_sent(self, phase: str | None = None) -> int:
        return sum(v for node in self.sent.values() for p, v in node.items()
                   if phase is None or p == phase)

    def node_sent(self, node, phase: str | None = None) -> int:
        return sum(v for p, v in self.sent.get(node, {}).items() if phase is None or p == phase)

    def per_user(self, n_users: int, phase: str = "train") -> Fraction:
        """System-wide transfers divided evenly over the users."""
        return Fraction(self.total_sent(phase), n_users)


def overhead_user_side(mode: str, n_users: int, n_nodes: int, n_out: int, t_max: int) -> Fraction:
    """Closed-form reals per user: ``2 t D O (U-1)`` (D2D) or ``2 t D O (U+1)/U`` (relayed)."""
    if mode == "D2D":
        return Fraction(2 * t_max * n_nodes * n_out * (n_users - 1))
    if mode == "BS-relayed":
        return Fraction(2 * t_max * n_nodes * n_out * (n_users + 1), n_users)
    raise ValueError(f"mode must be one of {MODES}")


def gram_inverse(A, rho: float) -> np.ndarray:
    """``(A^T A + rho I)^{-1}`` via Cholesky."""
    G = A.T @ A
    G[np.diag_indices_from(G)] += rho
    return linalg.cho_solve(linalg.cho_factor(G), np.eye(len(G)))


def inc_update_samples(C, A_new) -> np.ndarray:
    """Inverse after appending rows ``A_new``, by the Woodbury identity.

    ``C_S = C - C A'^T (I + A' C A'^T)^{-1} A' C``.
    """
    C = np.asarray(C, dtype=float)
    A_new = np.atleast_2d(np.asarray(A_new, dtype=float))
    if A_new.shape[0] == 0:
        return C.copy()
    if A_new.shape[1] != C.shape[0]:
        raise ValueError(f"new rows have {A_new.shape[1]} columns, inverse is {C.shape[0]}")
    K = C @ A_new.T
    S = A_new @ K
    S[np.diag_indices_from(S)] += 1.0
    return C - K @ linalg.cho_solve(linalg.cho_factor(S), K.T)


def inc_add_nodes(C_S, A_S, H_new, rho: float, max_cond: float = 1e12) -> np.ndarray:
    """Inverse after appending node columns ``H_new`` (block inverse via Schur complement).

    Raises ``np.linalg.LinAlgError`` when the Schur block is too badly
    conditioned (``cond > max_cond``) to invert reliably.
    """
    C_S = np.asarray(C_S, dtype=float)
    A_S = np.asarray(A_S, dtype=float)
    H_new = np.asarray(H_new, dtype=float)
    if H_new.ndim != 2 or H_new.shape[1] == 0:
        return C_S.copy()
    if H_new.shape[0] != A_S.shape[0] or A_S.shape[1] != C_S.shape[0]:
        raise ValueError("shapes of C_S, A_S and H_new are inconsistent")
    P = C_S @ (A_S.T @ H_new)  # C_S A_S^T H_a
    # rho I + H^T H - H^T A C A^T H, rewritten as a sum of PSD terms:
    # with R = H - A P it equals rho I + R^T R + rho P^T P. The direct
    # difference cancels badly when new nodes are close to span(A_S).
    R = H_new - A_S @ P
    schur = R.T @ R + rho * (P.T @ P)
    schur[np.diag_indices_from(schur)] += rho
    cond = np.linalg.cond(schur)
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"Schur block ill-conditioned (cond ~ {cond:.3e})")
    N = np.linalg.inv(schur)
    top_right = -P @ N
    return np.block([[C_S + P @ N @ P.T, top_right], [top_right.T, N]])


@dataclass
class ConsensusState:
    """ADMM iterates for all users; arrays are ``(U, D, O)`` / ``(D, O)``."""
    W: np.ndarray
    O: np.ndarray
    W0: np.ndarray
    rho: float
    lam: float
    t: int = 0

    @classmethod
    def zeros(cls, n_users: int, n_nodes: int, n_out: int, rho: float, lam: float) -> "ConsensusState":
        z = np.zeros((n_users, n_nodes, n_out))
        return cls(z, z.copy(), np.zeros((n_nodes, n_out)), rho, lam)


@dataclass
class RoundRecord:
    round: int
    user: int
    primal_residual: float
    dual_residual: float
    obj: float


def consensus_round(state: ConsensusState, C, AtY, A=None, Y=None,
                    ledger: OverheadLedger | None = None,
                    trace: list | None = None) -> ConsensusState:
    """One synchronous round; returns a new state.

    ``C[u]`` is the cached ``(A_u^T A_u + rho I)^{-1}`` and ``AtY[u]`` the
    cached ``A_u^T Y_u``. ``A``/``Y`` are only needed for the objective column
    of ``trace``.
    """
    U = state.W.shape[0]
    rho, lam = state.rho, state.lam
    W = np.empty_like(state.W)
    for u in range(U):
        W[u] = C[u] @ (AtY[u] - rho * (state.O[u] - state.W0))
    if not np.all(np.isfinite(W)):
        raise FloatingPointError(f"non-finite local weights in round {state.t + 1}")
    # fixed user order keeps the reduction deterministic
    W_bar = W.sum(axis=0) / U
    O_bar = state.O.sum(axis=0) / U
    W0 = (U * rho / (2 * lam + U * rho)) * (W_bar + O_bar)
    O = state.O + W - W0[None]
    if ledger is not None:
        _charge_round(ledger, U, W0.size)
    if trace is not None:
        dual = rho * float(np.linalg.norm(W0 - state.W0))
        for u in range(U):
            obj = float("nan")
            if A is not None and Y is not None:
                obj = 0.5 * float(np.linalg.norm(Y[u] - A[u] @ W0) ** 2) + lam / U * float(np.sum(W0 ** 2))
            trace.append(RoundRecord(state.t + 1, u, float(np.linalg.norm(W[u] - W0)), dual, obj))
    return ConsensusState(W, O, W0, rho, lam, state.t + 1)


def _charge_round(ledger: OverheadLedger, U: int, size: int):
    users = [f"user{u}" for u in range(U)]
    if ledger.mode == "D2D":
        for u in users:
            ledger.transfer(u, [v for v in users if v != u], 2 * size)
    elif ledger.mode == "BS-relayed":
        for u in users:
            ledger.transfer(u, ["bs"], 2 * size)
        ledger.transfer("bs", users, 2 * size, broadcast=True)
    else:
        raise ValueError(f"unknown ledger mode {ledger.mode!r}")


def run_consensus(C, AtY, rho: float, lam: float, t_max: int, A=None, Y=None,
                  ledger: OverheadLedger | None = None, trace: list | None = None,
                  tol: float | None = None) -> ConsensusState:
    """Iterate :func:`consensus_round` from zero, at most ``t_max`` times.

    With ``tol`` the loop also stops once the summed primal residual
    ``sum_u ||W_u - W_0||_F`` and the dual residual drop below it.
    """
    U, D, O = len(C), C[0].shape[0], AtY[0].shape[1]
    st = ConsensusState.zeros(U, D, O, rho, lam)
    for _ in range(t_max):
        prev = st.W0
        st = consensus_round(st, C, AtY, A, Y, ledger, trace)
        if tol is not None:
            primal = sum(float(np.linalg.norm(st.W[u] - st.W0)) for u in range(U))
            if primal < tol and rho * float(np.linalg.norm(st.W0 - prev)) < tol:
                break
    return st


def consensus_lambda(ridge_lam: float) -> float:
    """W_0 penalty whose fixed point is the ridge fit ``(ridge_lam I + A^T A)^{-1} A^T Y``.

    The consensus objective carries ``lam ||W_0||^2`` without the 1/2, so it
    lands on ``(2 lam I + A^T A)^{-1} A^T Y``; halving the configured value keeps
    collaborative and centralized training on the same regularization.
    """
    return ridge_lam / 2.0


def centralized_solution(A_list, Y_list, lam: float) -> np.ndarray:
    """Minimizer of ``1/2 sum_u ||Y_u - A_u W||^2 + lam ||W||^2`` (the consensus fixed point)."""
    return bl.ridge_solve(np.vstack(A_list), np.vstack(Y_list), 2 * lam)


@dataclass
class IncrementalBatch:
    X: np.ndarray  # raw (unnormalized) features, N' x input_dim
    Y: np.ndarray  # one-hot labels, N' x O
    node_add: tuple[int, int] | None = None  # (extra groups, nodes per group)


@dataclass
class UserSideModel:
    """Collaboratively trained per-user BL models sharing one set of random layers."""
    arch: bl.BLArchitecture
    layers: bl.BLRandomLayers
    normalizer: Standardizer
    n_bs: int
    rho: float
    lam: float
    A: list
    Y: list
    C: list
    W: np.ndarray
    W0: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.A)

    def model(self, u: int) -> bl.BLModel:
        return bl.BLModel(self.arch, self.layers, self.normalizer, self.W[u], self.C[u], self.n_bs)


def _check_shared(X_list, Y_list):
    if len(X_list) != len(Y_list) or not X_list:
        raise ValueError("need matching, non-empty per-user feature and label lists")
    dims = {np.shape(x)[1] for x in X_list} | set()
    outs = {np.shape(y)[1] for y in Y_list}
    if len(dims) != 1 or len(outs) != 1:
        raise ValueError("all users must share input and output dimensions")


def train_collaborative(X_list: Sequence, Y_list: Sequence, arch: bl.BLArchitecture, n_bs: int,
                        rho: float = 0.1, t_max: int = 10, normalizer: Standardizer | None = None,
                        layers: bl.BLRandomLayers | None = None, ledger: OverheadLedger | None = None,
                        tol: float | None = None) -> UserSideModel:
    """Collaborative (CBL) training from scratch.

    All users share ``layers`` (drawn from ``arch.seed`` when not given) and
    ``normalizer`` (fitted on the pooled features when not given: in a real
    deployment this would be agreed once, it is not part of the per-round
    exchange).
    """
    _check_shared(X_list, Y_list)
    norm = Standardizer.fit(np.vstack(X_list)) if normalizer is None else normalizer
    layers = bl.init_layers(arch, np.shape(X_list[0])[1]) if layers is None else layers
    A = [bl.map_nodes(norm(x), layers) for x in X_list]
    Y = [np.asarray(y, dtype=float) for y in Y_list]
    C = [gram_inverse(a, rho) for a in A]
    AtY = [a.T @ y for a, y in zip(A, Y)]
    lam = consensus_lambda(arch.lam)
    trace: list = []
    st = run_consensus(C, AtY, rho, lam, t_max, A, Y, ledger, trace, tol)
    return UserSideModel(arch, layers, norm, n_bs, rho, lam, A, Y, C, st.W, st.W0, trace)


def algorithm1(model: UserSideModel, batches: Sequence[IncrementalBatch], t_max: int = 10,
               ledger: OverheadLedger | None = None, tol: float | None = None) -> UserSideModel:
    """Incremental collaborative update (ICBL) of every user's model.

    For each user: map the new samples through the existing layers, extend the
    layers by the requested enhancement groups, update the cached inverse for
    the new rows and then the new columns, and finally run ``t_max`` consensus
    rounds from zero on the stacked data. The input model is left untouched;
    any failure leaves no partial result.
    """
    if len(batches) != model.n_users:
        raise ValueError(f"{len(batches)} batches for {model.n_users} users")
    adds = {b.node_add or (0, 0) for b in batches}
    if len(adds) != 1:
        raise ValueError("all users must add the same enhancement nodes")
    n_groups, nodes = adds.pop()
    layers = model.layers.extended(n_groups, nodes) if n_groups and nodes else model.layers
    new_groups = range(len(model.layers.W_h), len(layers.W_h))
    n_feat = layers.n_feature
    A_out, Y_out, C_out = [], [], []
    for u, batch in enumerate(batches):
        Xa = np.atleast_2d(np.asarray(batch.X, dtype=float))
        Ya = np.asarray(batch.Y, dtype=float).reshape(len(Xa), -1) if len(Xa) else \
            np.zeros((0, model.Y[u].shape[1]))
        if len(Xa):
            A_a = bl.map_nodes(model.normalizer(Xa), model.layers)
        else:
            A_a = np.zeros((0, model.A[u].shape[1]))
        A_S = np.vstack([model.A[u], A_a])
        C_S = inc_update_samples(model.C[u], A_a)
        if len(new_groups):
            H_a = bl.enhancement_nodes(A_S[:, :n_feat], layers, new_groups)
            C_SE = inc_add_nodes(C_S, A_S, H_a, model.rho)
            A_SE = np.hstack([A_S, H_a])
        else:
            C_SE, A_SE = C_S, A_S
        A_out.append(A_SE)
        Y_out.append(np.vstack([model.Y[u], Ya]))
        C_out.append(C_SE)
    AtY = [a.T @ y for a, y in zip(A_out, Y_out)]
    trace: list = []
    st = run_consensus(C_out, AtY, model.rho, model.lam, t_max, A_out, Y_out, ledger, trace, tol)
    arch = model.arch
    return UserSideModel(arch, layers, model.normalizer, model.n_bs, model.rho, model.lam,
                         A_out, Y_out, C_out, st.W, st.W0, trace)


def online_predict_user(x, model: UserSideModel, u: int, ledger: OverheadLedger | None = None):
    """Beam indices for user ``u`` from its own probing measurements only.

    Nothing is exchanged between users, so the ledger gains no transfers; the
    ``online`` phase is still touched so that it reports an explicit zero.
    """
    if ledger is not None:
        ledger.sent[f"user{u}"]["online"] += 0
    return model.model(u).predict(x)


def write_round_trace(path, trace: Sequence[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "user", "primal_residual", "dual_residual", "obj"])
        for r in trace:
            w.writerow([r.round, r.user, format(r.primal_residual, ".17g"),
                        format(r.dual_residual, ".17g"), format(r.obj, ".17g")])
