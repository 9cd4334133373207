"""Broad-learning network with frozen random layers and a ridge output layer."""
from __future__ import annotations

import struct
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataset import Standardizer
from .scene import stream

_FEATURE_STREAM = 21
_ENHANCE_STREAM = 22


@dataclass(frozen=True)
class BLArchitecture:
    n_feature_groups: int = 10  # I
    feature_nodes: int = 20  # F
    n_enhance_groups: int = 1  # J
    enhance_nodes: int = 500  # E
    lam: float = 2.0 ** -3
    seed: int = 0
    # multiplier on the enhancement pre-activation; None -> auto_enhance_scale
    enhance_scale: float | None = None

    def __post_init__(self):
        if min(self.n_feature_groups, self.feature_nodes, self.n_enhance_groups, self.enhance_nodes) < 1:
            raise ValueError("I, F, J, E must all be >= 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def n_nodes(self) -> int:
        return self.n_feature_groups * self.feature_nodes + self.n_enhance_groups * self.enhance_nodes


def default_arch(n_train: int, side: str = "user", seed: int = 0) -> BLArchitecture:
    """I=10, F=20, J=1; E=500 below 1000 samples else 1500; lam=2^-3 (user) / 2^-9 (BS)."""
    return BLArchitecture(10, 20, 1, 500 if n_train < 1000 else 1500,
                          2.0 ** -3 if side == "user" else 2.0 ** -9, seed)


def auto_enhance_scale(input_dim: int, n_feature: int) -> float:
    """Scale giving enhancement pre-activations a standard deviation near 0.5.

    Assumes standardized inputs and U[-1, 1] weights: a feature node then has
    variance (input_dim + 1)/3 and the enhancement sum n_feature/3 times that.
    """
    z_var = (input_dim + 1) / 3.0
    return 0.5 / math.sqrt(n_feature * z_var / 3.0 + 1.0 / 3.0)


def tansig(x):
    return 2.0 / (1.0 + np.exp(-2.0 * x)) - 1.0


@dataclass
class BLRandomLayers:
    """Feature maps ``W_e[i]`` (input_dim x F), ``b_e[i]`` and enhancement maps
    ``W_h[j]`` (I*F x E_j), ``b_h[j]``. Never touched by training."""
    W_e: list
    b_e: list
    W_h: list
    b_h: list
    seed: int
    key: int = 0
    scale: float = 1.0

    @property
    def input_dim(self) -> int:
        return self.W_e[0].shape[0]

    @property
    def n_feature(self) -> int:
        return sum(w.shape[1] for w in self.W_e)

    @property
    def enhance_sizes(self) -> list[int]:
        return [w.shape[1] for w in self.W_h]

    @property
    def n_nodes(self) -> int:
        return self.n_feature + sum(self.enhance_sizes)

    def extended(self, n_groups: int, nodes: int) -> "BLRandomLayers":
        """Copy with ``n_groups`` more enhancement groups of ``nodes`` nodes.

        Group ``j`` always comes from the same spawned stream, so appending
        groups here gives the same weights as generating them up front.
        """
        W_h, b_h = list(self.W_h), list(self.b_h)
        for j in range(len(W_h), len(W_h) + n_groups):
            w, b = _enhance_group(self.seed, self.key, j, self.n_feature, nodes)
            W_h.append(w)
            b_h.append(b)
        return BLRandomLayers(list(self.W_e), list(self.b_e), W_h, b_h, self.seed, self.key, self.scale)


def _enhance_group(seed, key, j, n_feature, nodes):
    g = stream(seed, _ENHANCE_STREAM, key, j)
    return g.uniform(-1, 1, (n_feature, nodes)), g.uniform(-1, 1, (1, nodes))


def init_layers(arch: BLArchitecture, input_dim: int, key: int = 0) -> BLRandomLayers:
    """Draw every random weight and bias i.i.d. uniform on [-1, 1].

    ``key`` separates independent networks built from one seed (e.g. one per
    BS); users that must agree on node semantics share ``key``.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    W_e, b_e = [], []
    for i in range(arch.n_feature_groups):
        g = stream(arch.seed, _FEATURE_STREAM, key, i)
        W_e.append(g.uniform(-1, 1, (input_dim, arch.feature_nodes)))
        b_e.append(g.uniform(-1, 1, (1, arch.feature_nodes)))
    n_feature = arch.n_feature_groups * arch.feature_nodes
    W_h, b_h = [], []
    for j in range(arch.n_enhance_groups):
        w, b = _enhance_group(arch.seed, key, j, n_feature, arch.enhance_nodes)
        W_h.append(w)
        b_h.append(b)
    scale = arch.enhance_scale
    if scale is None:
        scale = auto_enhance_scale(input_dim, n_feature)
    return BLRandomLayers(W_e, b_e, W_h, b_h, arch.seed, key, scale)


def feature_nodes(X, layers: BLRandomLayers) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != layers.input_dim:
        raise ValueError(f"input has {X.shape[1]} columns, layers expect {layers.input_dim}")
    return np.hstack([X @ w + b for w, b in zip(layers.W_e, layers.b_e)])


def enhancement_nodes(Z, layers: BLRandomLayers, groups=None) -> np.ndarray:
    groups = range(len(layers.W_h)) if groups is None else groups
    s = layers.scale
    return np.hstack([tansig(s * (Z @ layers.W_h[j] + layers.b_h[j])) for j in groups])


def map_nodes(X, layers: BLRandomLayers) -> np.ndarray:
    """``A = [Z | H]``: linear feature nodes, tansig enhancement nodes.

    ``Z_i = X W_e[i] + b_e[i]`` and ``H_j = tansig(scale * (Z W_h[j] + b_h[j]))``.
    """
    Z = feature_nodes(X, layers)
    return np.hstack([Z, enhancement_nodes(Z, layers)])


def ridge_solve(A, Y, lam: float, return_inverse: bool = False):
    """``(lam I + A^T A)^{-1} A^T Y`` by Cholesky.

    With ``return_inverse`` the regularised Gram inverse is also returned
    (needed by the incremental updates).
    """
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in ridge inputs")
    G = A.T @ A
    G[np.diag_indices_from(G)] += lam
    c = linalg.cho_factor(G)
    W = linalg.cho_solve(c, A.T @ Y)
    if return_inverse:
        return W, linalg.cho_solve(c, np.eye(len(G)))
    return W


def block_argmax(scores, n_blocks: int) -> np.ndarray:
    """First-max index inside each of ``n_blocks`` equal blocks of the last axis."""
    s = np.asarray(scores)
    lead = s.shape[:-1]
    return np.argmax(s.reshape(*lead, n_blocks, -1), axis=-1)


@dataclass
class BLModel:
    arch: BLArchitecture
    layers: BLRandomLayers
    normalizer: Standardizer
    W_out: np.ndarray | None = None
    C_cache: np.ndarray | None = None
    n_bs: int = 1

    @property
    def trained(self) -> bool:
        return self.W_out is not None

    def nodes(self, X) -> np.ndarray:
        return map_nodes(self.normalizer(X), self.layers)

    def scores(self, X) -> np.ndarray:
        if not self.trained:
            raise RuntimeError("model has not been trained")
        s = self.nodes(X) @ self.W_out
        return s[0] if np.ndim(X) == 1 else s

    def predict(self, X) -> np.ndarray:
        """Per-BS beam indices (0-based), shape ``(N, n_bs)`` or ``(n_bs,)``."""
        return block_argmax(self.scores(X), self.n_bs)


def fit(X, Y, arch: BLArchitecture, n_bs: int, normalizer: Standardizer | None = None,
        keep_inverse: bool = False, key: int = 0) -> BLModel:
    """Train a stand-alone BL model on raw features ``X`` and one-hot labels ``Y``."""
    X = np.asarray(X, dtype=float)
    norm = Standardizer.fit(X) if normalizer is None else normalizer
    layers = init_layers(arch, X.shape[1], key)
    A = map_nodes(norm(X), layers)
    if keep_inverse:
        W, C = ridge_solve(A, Y, arch.lam, return_inverse=True)
    else:
        W, C = ridge_solve(A, Y, arch.lam), None
    return BLModel(arch, layers, norm, W, C, n_bs)


# --- BLM1 container -------------------------------------------------------
#
# magic "BLM1", uint32 section count, then per section:
#   8-byte ASCII tag, 1-byte dtype ('f' float64 / 'i' int64), uint32 ndim,
#   ndim x uint64 dims, little-endian payload.

_MAGIC = b"BLM1"


def _pack(tag: str, arr) -> bytes:
    arr = np.asarray(arr)
    code = b"i" if arr.dtype.kind in "iu" else b"f"
    data = arr.astype("<i8" if code == b"i" else "<f8")
    head = tag.encode().ljust(8, b"\0") + code + struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + data.tobytes()


def dumps_model(model: BLModel) -> bytes:
    a = model.arch
    sections = [
        _pack("ARCH", np.array([a.n_feature_groups, a.feature_nodes, a.n_enhance_groups,
                                a.enhance_nodes, a.lam, model.layers.scale])),
        _pack("SEED", np.array([a.seed, model.layers.key, model.n_bs, model.layers.input_dim],
                               dtype=np.int64)),
        _pack("ENHG", np.array(model.layers.enhance_sizes, dtype=np.int64)),
        _pack("NMEAN", model.normalizer.mean),
        _pack("NSTD", model.normalizer.std),
    ]
    if model.W_out is not None:
        sections.append(_pack("WOUT", model.W_out))
    if model.C_cache is not None:
        sections.append(_pack("CCACHE", model.C_cache))
    return _MAGIC + struct.pack("<I", len(sections)) + b"".join(sections)


def loads_model(buf: bytes) -> BLModel:
    if buf[:4] != _MAGIC:
        raise ValueError("not a BLM1 container")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    sec = {}
    for _ in range(count):
        tag = buf[off:off + 8].rstrip(b"\0").decode()
        code = buf[off + 8:off + 9]
        (ndim,) = struct.unpack_from("<I", buf, off + 9)
        off += 13
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        dt = "<i8" if code == b"i" else "<f8"
        sec[tag] = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    for tag in ("ARCH", "SEED", "ENHG", "NMEAN", "NSTD"):
        if tag not in sec:
            raise ValueError(f"missing section {tag}")
    I, F, J, E, lam, scale = sec["ARCH"]
    seed, key, n_bs, input_dim = (int(v) for v in sec["SEED"])
    arch = BLArchitecture(int(I), int(F), int(J), int(E), float(lam), seed, float(scale))
    layers = init_layers(arch, input_dim, key)
    extra = [int(e) for e in sec["ENHG"][int(J):]]
    for e in extra:
        layers = layers.extended(1, e)
    if list(layers.enhance_sizes) != [int(e) for e in sec["ENHG"]]:
        raise ValueError("enhancement group sizes disagree with the architecture")
    if sec["NMEAN"].shape != (input_dim,) or sec["NSTD"].shape != (input_dim,):
        raise ValueError("normalizer length does not match input_dim")
    D = layers.n_nodes
    W = sec.get("WOUT")
    if W is not None and W.shape[0] != D:
        raise ValueError(f"W_out has {W.shape[0]} rows, network has {D} nodes")
    C = sec.get("CCACHE")
    if C is not None and C.shape != (D, D):
        raise ValueError("C_cache shape does not match the node count")
    return BLModel(arch, layers, Standardizer(sec["NMEAN"], sec["NSTD"]), W, C, n_bs)


def save_model(path, model: BLModel) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> BLModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
