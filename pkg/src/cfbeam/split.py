"""BS-side collaborative BL training: split-feature (sharing) ADMM across BSs.

Each BS ``b`` owns the feature slice measured on its own array and a local
BL network; the CU owns the labels. Predictions fuse by summing the local
scores ``A_b W_b`` over BSs. Fronthaul messages can be sparsified per row
(maximum-value sparsification, MVS) before they leave a node.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from . import bl
from .consensus import OverheadLedger, inc_add_nodes, inc_update_samples
from .dataset import Standardizer

_RECORD = np.dtype([("row", "<u4"), ("index", "<u4"), ("value", "<f8")])
_HEADER = struct.Struct("<IIII")  # payload bytes, n_rows, n_cols, budget


# --- MVS ------------------------------------------------------------------

@dataclass
class MVSMessage:
    """Per-row top-``budget`` entries of an ``n_rows x n_cols`` matrix."""
    indices: np.ndarray  # (n_rows, budget), strictly increasing per row
    values: np.ndarray  # (n_rows, budget)
    n_rows: int
    n_cols: int
    budget: int

    @property
    def reals(self) -> int:
        # one value plus one index per kept entry
        return 2 * self.n_rows * self.budget


def mvs_compress(M, budget: int) -> MVSMessage:
    """Keep the ``budget`` largest-magnitude entries of every row.

    Ties go to the lower column index.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("MVS works on matrices")
    n, o = M.shape
    if not 1 <= budget <= o:
        raise ValueError(f"sparsity budget must lie in 1..{o}, got {budget}")
    order = np.argsort(-np.abs(M), axis=1, kind="stable")[:, :budget]
    idx = np.sort(order, axis=1)
    return MVSMessage(idx, np.take_along_axis(M, idx, axis=1), n, o, budget)


def mvs_decompress(msg: MVSMessage) -> np.ndarray:
    out = np.zeros((msg.n_rows, msg.n_cols))
    np.put_along_axis(out, msg.indices, msg.values, axis=1)
    return out


def encode_frame(msg: MVSMessage) -> bytes:
    """Length-prefixed frame of little-endian ``(row u32, index u32, value f64)`` records."""
    rec = np.empty(msg.n_rows * msg.budget, dtype=_RECORD)
    rec["row"] = np.repeat(np.arange(msg.n_rows, dtype=np.uint32), msg.budget)
    rec["index"] = msg.indices.ravel()
    rec["value"] = msg.values.ravel()
    payload = rec.tobytes()
    return _HEADER.pack(len(payload), msg.n_rows, msg.n_cols, msg.budget) + payload


def decode_frame(buf: bytes) -> MVSMessage:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated frame header")
    size, n, o, k = _HEADER.unpack_from(buf)
    if len(buf) != _HEADER.size + size or size != n * k * _RECORD.itemsize:
        raise ValueError("frame length does not match its header")
    rec = np.frombuffer(buf, dtype=_RECORD, offset=_HEADER.size)
    if np.any(rec["row"] != np.repeat(np.arange(n), k)):
        raise ValueError("frame records out of row order")
    return MVSMessage(rec["index"].astype(np.int64).reshape(n, k),
                      rec["value"].reshape(n, k).copy(), n, o, k)


@dataclass
class FronthaulRecord:
    round: int
    node: str
    direction: str  # "up" (BS -> CU) or "down" (CU -> BS)
    reals: int
    sparsity_budget: int  # 0 for a dense transfer


class InProcessTransport:
    """Moves matrices between BSs and the CU inside one process.

    Every transfer is charged to the ledger and the fronthaul trace. With
    ``serialize`` the compressed payload takes a round trip through the byte
    framing, as a socket transport would.
    """

    def __init__(self, ledger: OverheadLedger | None = None, serialize: bool = False):
        self.ledger = ledger if ledger is not None else OverheadLedger("fronthaul")
        self.serialize = serialize
        self.trace: list[FronthaulRecord] = []
        self.bytes_moved = 0

    def send(self, src: str, dst: str, M, budget: int | None, t: int, phase: str = "train") -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if budget is None:
            reals = M.size
            out = M
            self.bytes_moved += M.nbytes
        else:
            msg = mvs_compress(M, budget)
            if self.serialize:
                frame = encode_frame(msg)
                self.bytes_moved += len(frame)
                msg = decode_frame(frame)
            else:
                self.bytes_moved += _HEADER.size + msg.n_rows * msg.budget * _RECORD.itemsize
            reals = msg.reals
            out = mvs_decompress(msg)
        self.ledger.transfer(src, [dst], reals, phase)
        bs = dst if src == "cu" else src
        self.trace.append(FronthaulRecord(t, bs, "down" if src == "cu" else "up", reals, budget or 0))
        return out


def write_fronthaul_trace(path, trace: Sequence[FronthaulRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "node", "direction", "reals", "sparsity_budget"])
        for r in trace:
            w.writerow([r.round, r.node, r.direction, r.reals, r.sparsity_budget])


def overhead_bs_side(N: int, budget: int, M: int, t_max: int) -> int:
    """Reals over one BS's fronthaul link: ``8 t_max N N_b + N M``."""
    return 8 * t_max * N * budget + N * M


# --- ADMM -----------------------------------------------------------------

def local_nodes(X_b, layers_b: bl.BLRandomLayers) -> np.ndarray:
    """BS-local ``A_b = [Z_b | H_b]`` (same mechanics as :func:`bl.map_nodes`)."""
    return bl.map_nodes(X_b, layers_b)


def q_inverse(A_b, rho: float, lam: float) -> np.ndarray:
    """``Q_b^{-1} = (rho A_b^T A_b + lam I)^{-1}``."""
    Q = rho * (A_b.T @ A_b)
    Q[np.diag_indices_from(Q)] += lam
    return linalg.cho_solve(linalg.cho_factor(Q), np.eye(len(Q)))


def q_inverse_update(Q_inv, A_old, A_new, H_new, rho: float, lam: float) -> np.ndarray:
    """Incremental ``Q^{-1}`` after new rows ``A_new`` and new node columns ``H_new``.

    ``Q = rho (A^T A + (lam/rho) I)``, so the user-side row and column updates
    apply to ``rho Q^{-1}`` with penalty ``lam/rho``.
    """
    C = inc_update_samples(rho * np.asarray(Q_inv), A_new)
    A_S = np.vstack([A_old, A_new])
    if H_new is not None and np.shape(H_new)[1]:
        C = inc_add_nodes(C, A_S, H_new, lam / rho)
    return C / rho


@dataclass
class SplitState:
    """Per-BS models and local products, plus the CU's dense state.

    ``view`` holds what the BSs last received from the CU (``AW``, ``V``,
    ``O``); it differs from the CU copies only under compression.
    """
    W: list
    AW_local: list
    AW: np.ndarray
    V: np.ndarray
    O: np.ndarray
    view: tuple
    rho: float
    lam: float
    t: int = 0

    @classmethod
    def zeros(cls, dims: Sequence[int], n: int, n_out: int, rho: float, lam: float) -> "SplitState":
        z = np.zeros((n, n_out))
        return cls([np.zeros((d, n_out)) for d in dims], [z.copy() for _ in dims],
                   z.copy(), z.copy(), z.copy(), (z.copy(), z.copy(), z.copy()), rho, lam)

    def fitted(self) -> np.ndarray:
        """``sum_b A_b W_b``."""
        out = np.zeros_like(self.AW)
        for x in self.AW_local:
            out += x
        return out


def split_objective(A_list, W_list, Y, lam: float) -> float:
    fit = sum(a @ w for a, w in zip(A_list, W_list))
    return 0.5 * float(np.sum((fit - Y) ** 2)) + 0.5 * lam * sum(float(np.sum(w ** 2)) for w in W_list)


def central_split_solution(A_list, Y, lam: float) -> list:
    """Centralized optimum on concatenated features, split back per BS."""
    W = bl.ridge_solve(np.hstack(A_list), Y, lam)
    cuts = np.cumsum([a.shape[1] for a in A_list])[:-1]
    return np.split(W, cuts, axis=0)


def split_round(state: SplitState, A_list, P_list, Y, budget: int | None = None,
                transport: InProcessTransport | None = None) -> SplitState:
    """One round; ``P_list[b]`` is the cached ``rho Q_b^{-1} A_b^T``."""
    B = len(A_list)
    n_out = Y.shape[1]
    if budget is not None and not 1 <= budget <= n_out:
        raise ValueError(f"sparsity budget must lie in 1..{n_out}, got {budget}")
    t = state.t + 1
    rho = state.rho
    AW_v, V_v, O_v = state.view
    W, AW_local, up = [], [], []
    for b in range(B):
        w = P_list[b] @ (state.AW_local[b] + V_v - AW_v - O_v)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"non-finite weights at BS {b} in round {t}")
        aw = A_list[b] @ w
        W.append(w)
        AW_local.append(aw)
        up.append(_move(transport, f"bs{b}", "cu", aw, budget, t))
    AW = np.zeros_like(state.AW)
    for x in up:  # fixed BS order
        AW += x
    AW /= B
    V = (Y + rho * AW + rho * state.O) / (B + rho)
    O = state.O + AW - V
    # the CU compresses once; every BS link carries the same payload
    views = [tuple(_move(transport, "cu", f"bs{b}", m, budget, t) for m in (AW, V, O)) for b in range(B)]
    return SplitState(W, AW_local, AW, V, O, views[0], rho, state.lam, t)


def _move(transport, src, dst, M, budget, t):
    if transport is not None:
        return transport.send(src, dst, M, budget, t)
    return M if budget is None else mvs_decompress(mvs_compress(M, budget))


def run_split(A_list, Y, rho: float, lam: float, t_max: int, budget: int | None = None,
              transport: InProcessTransport | None = None, P_list=None,
              objective: list | None = None) -> SplitState:
    """Split-training iterations on precomputed node matrices, from zero."""
    Y = np.asarray(Y, dtype=float)
    if P_list is None:
        P_list = [rho * q_inverse(a, rho, lam) @ a.T for a in A_list]
    st = SplitState.zeros([a.shape[1] for a in A_list], len(Y), Y.shape[1], rho, lam)
    for _ in range(t_max):
        st = split_round(st, A_list, P_list, Y, budget, transport)
        if objective is not None:
            objective.append(split_objective(A_list, st.W, Y, lam))
    return st


@dataclass
class BSSideModel:
    """Per-BS local networks and output weights; fusion happens at the CU."""
    arch: bl.BLArchitecture
    layers: list
    normalizers: list
    W: list
    n_bs: int
    n_probes: int
    rho: float
    lam: float
    objective: list = field(default_factory=list)

    def local_scores(self, b: int, x_b) -> np.ndarray:
        a = local_nodes(self.normalizers[b](np.atleast_2d(x_b)), self.layers[b])
        return a @ self.W[b]

    def predict(self, x_slices: Sequence, ledger: OverheadLedger | None = None,
                normalize: bool = False) -> np.ndarray:
        """Fused per-BS indices from each BS's own feature slice."""
        one = np.ndim(x_slices[0]) == 1
        reports = {b: self.local_scores(b, x_slices[b]) for b in range(self.n_bs)}
        idx = online_fuse(reports, self.n_bs, ledger=ledger, normalize=normalize)
        return idx[0] if one else idx


def online_fuse(reports: Mapping[int, np.ndarray] | Sequence, n_bs: int,
                ledger: OverheadLedger | None = None, normalize: bool = False) -> np.ndarray:
    """Sum the local score rows of all BSs and take the first max per BS block.

    ``reports`` maps BS index to its ``(N, B*M)`` (or ``(B*M,)``) scores; the
    sum runs in BS index order whatever the arrival order. ``normalize``
    scales every report row to unit L2 norm first (off by default).
    """
    if not isinstance(reports, Mapping):
        reports = dict(enumerate(reports))
    missing = [b for b in range(n_bs) if b not in reports]
    if missing:
        raise ValueError(f"missing score reports from BS {missing}")
    total = None
    for b in range(n_bs):
        s = np.atleast_2d(np.asarray(reports[b], dtype=float))
        if normalize:
            nrm = np.linalg.norm(s, axis=1, keepdims=True)
            s = s / np.where(nrm > 0, nrm, 1.0)
        if ledger is not None:
            ledger.transfer(f"bs{b}", ["cu"], s.size, "online")
        total = s.copy() if total is None else total + s
    return bl.block_argmax(total, n_bs)


def algorithm2(X_slices: Sequence, Y, arch: bl.BLArchitecture, n_bs: int, n_probes: int,
               rho: float = 0.1, lam: float | None = None, t_max: int = 5,
               budget: int | None = None, normalizers: Sequence | None = None,
               transport: InProcessTransport | None = None) -> BSSideModel:
    """BS-side collaborative training from per-BS feature slices.

    BS ``b`` uses random layers drawn under ``key=b``; each BS uploads its
    ``N x M`` label block to the CU once before the first round.
    """
    if len(X_slices) != n_bs:
        raise ValueError(f"{len(X_slices)} feature slices for {n_bs} BSs")
    Y = np.asarray(Y, dtype=float)
    lam = arch.lam if lam is None else lam
    norms = [Standardizer.fit(x) for x in X_slices] if normalizers is None else list(normalizers)
    layers = [bl.init_layers(arch, np.shape(X_slices[b])[1], key=b) for b in range(n_bs)]
    A_list = [local_nodes(norms[b](X_slices[b]), layers[b]) for b in range(n_bs)]
    n, m = len(Y), Y.shape[1] // n_bs
    if transport is not None:
        for b in range(n_bs):
            transport.ledger.transfer(f"bs{b}", ["cu"], n * m, "train")
            transport.trace.append(FronthaulRecord(0, f"bs{b}", "up", n * m, 0))
    objective: list = []
    st = run_split(A_list, Y, rho, lam, t_max, budget, transport, objective=objective)
    return BSSideModel(arch, layers, norms, st.W, n_bs, n_probes, rho, lam, objective)


def link_overhead(ledger: OverheadLedger, b: int, phase: str = "train") -> int:
    """Reals carried by BS ``b``'s fronthaul link in both directions."""
    node = f"bs{b}"
    return ledger.node_sent(node, phase) + ledger.received.get(node, {}).get(phase, 0)
