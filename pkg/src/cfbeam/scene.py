"""Synthetic multipath scenes, UPA codebooks and beam-training measurements.

Geometry conventions
--------------------
Each BS carries an ``n_rows x n_cols`` uniform planar array in its local y-z
plane with boresight along local +x (rotated about z by ``bs_yaw_rad``).
Azimuth ``theta`` is measured in the local x-y plane from +x, elevation
``phi`` is the polar angle from +z, so the boresight is ``(0, pi/2)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23

PROBE_KINDS = ("expanded_steering", "steering", "single_antenna_omni")

# stream tags for SeedSequence spawn keys
_STREAM_POSITION = 1
_STREAM_LINK = 2
_STREAM_MEASURE = 3

_CSV_HEADER = ["b", "u", "l", "gain_re", "gain_im", "delay_s", "azimuth_rad",
               "elevation_rad", "pos_x", "pos_y", "pos_z"]


def _default_region():
    # x0, x1, y0, y1, user height (m); 36 m x 80 m street segment
    return (20.0, 56.0, -40.0, 40.0, 2.0)


def _default_bs_positions():
    # BS 0 sees the region centre at azimuth 55.89 deg, elevation 96.25 deg
    x0, x1, y0, y1, zu = _default_region()
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    height = 6.0
    rng_h = (height - zu) / math.tan(math.radians(96.25 - 90.0))
    az = math.radians(55.89)
    bs0 = (cx - rng_h * math.cos(az), cy - rng_h * math.sin(az), height)
    bs1 = (cx - rng_h * math.cos(az), cy + rng_h * math.sin(az), height)
    bs2 = (0.0, cy, height)
    return (bs0, bs1, bs2)


def thermal_noise(bandwidth_hz: float, n_subcarriers: int, noise_figure_db: float = 10.0) -> float:
    """Per-subcarrier thermal noise power kTB*NF in watts."""
    return BOLTZMANN * 290.0 * bandwidth_hz / n_subcarriers * 10 ** (noise_figure_db / 10)


@dataclass(frozen=True)
class ScenarioConfig:
    n_bs: int = 3
    n_rows: int = 8
    n_cols: int = 4
    n_users: int = 2
    n_subcarriers: int = 1024
    carrier_hz: float = 60e9
    bandwidth_hz: float = 500e6
    subcarriers_per_user: int = 64
    groups_per_user: int = 16
    n_paths: int = 3
    p_dl_total: float = 5.0
    p_ul: float = 0.2
    noise_var: float = field(default_factory=lambda: thermal_noise(500e6, 1024))
    tracking_period_ms: float = 96.0
    beam_time_ms: float = 0.48
    n_probes: int = 1
    antenna_spacing: float = 0.5
    region: tuple = field(default_factory=_default_region)
    bs_positions: tuple = field(default_factory=_default_bs_positions)
    bs_yaw_rad: tuple | None = None
    reflection_loss_db: float = 10.0
    probe_kind: str = "expanded_steering"
    expansion_factor: float = 0.9
    expansion_subarrays: int = 2
    p_tr_dl: float | None = None
    p_tr_ul: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_bs", "n_rows", "n_cols", "n_users", "n_subcarriers",
                     "subcarriers_per_user", "groups_per_user", "n_probes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.subcarriers_per_user % self.groups_per_user:
            raise ValueError("subcarriers_per_user must be divisible by groups_per_user")
        if self.n_users * self.subcarriers_per_user > self.n_subcarriers:
            raise ValueError("users x subcarriers_per_user exceeds n_subcarriers")
        if self.tracking_period_ms <= 0 or self.beam_time_ms <= 0:
            raise ValueError("tracking_period_ms and beam_time_ms must be positive")
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")
        if len(self.bs_positions) != self.n_bs:
            raise ValueError(f"bs_positions has {len(self.bs_positions)} entries, n_bs={self.n_bs}")
        x0, x1, y0, y1, _ = self.region
        if not (x1 > x0 and y1 > y0):
            raise ValueError("region must be non-degenerate")
        if self.probe_kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe_kind {self.probe_kind!r}")
        if self.n_probes > self.n_antennas:
            raise ValueError("n_probes cannot exceed the number of antennas")
        if self.n_cols % self.expansion_subarrays:
            raise ValueError("n_cols must be divisible by expansion_subarrays")

    @property
    def n_antennas(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def group_size(self) -> int:
        return self.subcarriers_per_user // self.groups_per_user

    @property
    def data_power(self) -> float:
        """Downlink data power per subcarrier, P / (U K_u)."""
        return self.p_dl_total / (self.n_users * self.subcarriers_per_user)

    @property
    def train_power_dl(self) -> float:
        if self.p_tr_dl is not None:
            return self.p_tr_dl
        return self.p_dl_total / (self.n_users * self.subcarriers_per_user)

    @property
    def train_power_ul(self) -> float:
        if self.p_tr_ul is not None:
            return self.p_tr_ul
        return self.p_ul / self.subcarriers_per_user

    @property
    def region_center(self) -> np.ndarray:
        x0, x1, y0, y1, z = self.region
        return np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1), z])

    def yaw(self, b: int) -> float:
        return 0.0 if self.bs_yaw_rad is None else float(self.bs_yaw_rad[b])

    def subcarrier_freqs(self, user: int) -> np.ndarray:
        """Centre frequencies of the K_u subcarriers allocated to ``user``."""
        spacing = self.bandwidth_hz / self.n_subcarriers
        k = np.arange(user * self.subcarriers_per_user, (user + 1) * self.subcarriers_per_user)
        return self.carrier_hz + (k - self.n_subcarriers / 2) * spacing

    def group_map(self) -> np.ndarray:
        """Group index of each of the user's subcarriers (contiguous groups)."""
        return np.repeat(np.arange(self.groups_per_user), self.group_size)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for the given spawn key."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def steering_vector(theta, phi, n_rows: int, n_cols: int, d_over_lambda: float = 0.5) -> np.ndarray:
    """UPA response a_z(phi) kron a_y(theta, phi), unit-modulus entries."""
    if n_rows < 1 or n_cols < 1:
        raise ValueError("array dimensions must be >= 1")
    kd = 2 * np.pi * d_over_lambda
    a_z = np.exp(1j * kd * np.arange(n_rows) * np.cos(phi))
    a_y = np.exp(1j * kd * np.arange(n_cols) * np.sin(theta) * np.sin(phi))
    return np.kron(a_z, a_y)


def _dft(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.exp(2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def dft_codebook(n_rows: int, n_cols: int) -> np.ndarray:
    """2-D DFT codebook, columns are the M = n_rows*n_cols narrow beams.

    Column ``i = iz * n_cols + iy`` points at vertical/horizontal spatial
    frequencies ``2*pi*iz/n_rows`` and ``2*pi*iy/n_cols``; the sign matches
    :func:`steering_vector` so that a path on a grid direction lines up with
    exactly one column.
    """
    if n_rows < 1 or n_cols < 1:
        raise ValueError("array dimensions must be >= 1")
    return np.kron(_dft(n_rows), _dft(n_cols))


def direction_angles(src, dst, yaw: float = 0.0) -> tuple[float, float]:
    """Azimuth/elevation of ``dst`` seen from an array at ``src``."""
    v = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    c, s = math.cos(yaw), math.sin(yaw)
    x = c * v[0] + s * v[1]
    y = -s * v[0] + c * v[1]
    r = math.sqrt(x * x + y * y + v[2] * v[2])
    return math.atan2(y, x), math.acos(v[2] / r)


def expanded_steering(theta, phi, n_rows, n_cols, d_over_lambda=0.5, c=0.9, p=2) -> np.ndarray:
    """Horizontally widened beam aimed at (theta, phi), unit norm.

    The horizontal aperture is cut into ``p`` sub-arrays. Each sub-array keeps
    the aim phase and adds its own local ramp deflected by
    ``c*pi*(2s - p + 1)/L`` (``L`` elements per sub-array), so the sub-beams
    fan out around the aim direction. The vertical dimension is not expanded.
    """
    if n_cols % p:
        raise ValueError("n_cols must be divisible by p")
    kd = 2 * np.pi * d_over_lambda
    sub = n_cols // p
    n = np.arange(n_cols)
    s = n // sub
    local = n - s * sub
    deflect = c * np.pi * (2 * s - p + 1) / sub
    a_y = np.exp(1j * (kd * n * np.sin(theta) * np.sin(phi) + deflect * local))
    a_z = np.exp(1j * kd * np.arange(n_rows) * np.cos(phi))
    w = np.kron(a_z, a_y)
    return w / np.linalg.norm(w)


def _aim_points(cfg: ScenarioConfig, aim_point, n: int) -> list[np.ndarray]:
    if aim_point is not None:
        base = np.asarray(aim_point, dtype=float)
    else:
        base = cfg.region_center
    if n == 1:
        return [base]
    # spread additional aim points along the longer region axis
    x0, x1, y0, y1, _ = cfg.region
    axis = 1 if (y1 - y0) >= (x1 - x0) else 0
    lo, hi = (y0, y1) if axis == 1 else (x0, x1)
    pts = []
    for i in range(n):
        q = base.copy()
        q[axis] = lo + (i + 0.5) * (hi - lo) / n
        pts.append(q)
    return pts


def make_probing_beams(cfg: ScenarioConfig, kind: str | None = None, aim_point=None) -> list[np.ndarray]:
    """Probing beams per BS, each an ``(M, n_probes)`` array of unit-norm columns.

    Column ``j`` corresponds to probe index ``i = j - n_probes + 1``.
    """
    kind = cfg.probe_kind if kind is None else kind
    if kind not in PROBE_KINDS:
        raise ValueError(f"unknown probing beam kind {kind!r}")
    n_w, m = cfg.n_probes, cfg.n_antennas
    if n_w > m:
        raise ValueError(f"n_probes={n_w} exceeds M={m}")
    out = []
    for b in range(cfg.n_bs):
        beams = np.zeros((m, n_w), dtype=complex)
        if kind == "single_antenna_omni":
            beams[np.arange(n_w), np.arange(n_w)] = 1.0
        else:
            for j, q in enumerate(_aim_points(cfg, aim_point, n_w)):
                th, ph = direction_angles(cfg.bs_positions[b], q, cfg.yaw(b))
                if kind == "steering":
                    v = steering_vector(th, ph, cfg.n_rows, cfg.n_cols, cfg.antenna_spacing)
                    beams[:, j] = v / np.linalg.norm(v)
                else:
                    beams[:, j] = expanded_steering(th, ph, cfg.n_rows, cfg.n_cols, cfg.antenna_spacing,
                                                    cfg.expansion_factor, cfg.expansion_subarrays)
        out.append(beams)
    return out


@dataclass
class ChannelRealization:
    """Multipath parameters of every BS link for one user position.

    Path arrays have shape ``(n_bs, n_paths)``.
    """
    user: int
    position: np.ndarray
    gains: np.ndarray
    delays: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.gains.shape[1]

    def channels(self, cfg: ScenarioConfig) -> np.ndarray:
        """Per-subcarrier channel vectors h_{b,u,k}, shape ``(n_bs, K_u, M)``."""
        f = cfg.subcarrier_freqs(self.user)
        out = np.zeros((len(self.gains), len(f), cfg.n_antennas), dtype=complex)
        for b in range(len(self.gains)):
            a = np.stack([steering_vector(t, p, cfg.n_rows, cfg.n_cols, cfg.antenna_spacing)
                          for t, p in zip(self.azimuths[b], self.elevations[b])])
            coef = self.gains[b][None, :] * np.exp(-2j * np.pi * np.outer(f, self.delays[b]))
            out[b] = coef @ a
        return out


def _link_paths(cfg: ScenarioConfig, bs, user_pos, b: int, rng: np.random.Generator):
    lam = cfg.wavelength
    loss = 10 ** (-cfg.reflection_loss_db / 20)
    dist = float(np.linalg.norm(user_pos - bs))
    gains = [lam / (4 * np.pi * dist) * np.exp(2j * np.pi * rng.random())]
    delays = [dist / SPEED_OF_LIGHT]
    th, ph = direction_angles(bs, user_pos, cfg.yaw(b))
    az, el = [th], [ph]
    x0, x1, y0, y1, _ = cfg.region
    top = max(float(bs[2]), float(user_pos[2]))
    for _ in range(cfg.n_paths - 1):
        sc = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(0.0, top)])
        length = float(np.linalg.norm(sc - bs) + np.linalg.norm(user_pos - sc))
        gains.append(loss * lam / (4 * np.pi * length) * np.exp(2j * np.pi * rng.random()))
        delays.append(length / SPEED_OF_LIGHT)
        th, ph = direction_angles(bs, sc, cfg.yaw(b))
        az.append(th)
        el.append(ph)
    return gains, delays, az, el


def gen_scene(cfg: ScenarioConfig, n_positions: int, seed: int | None = None) -> list[ChannelRealization]:
    """Sample user positions in the region and build LOS + single-bounce paths.

    Every position and every link draws from its own spawned stream, so the
    output for position ``n`` does not depend on how many others are drawn.
    Position ``n`` is assigned to user ``n % n_users``.
    """
    if cfg.n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if n_positions < 1:
        raise ValueError("n_positions must be >= 1")
    seed = cfg.seed if seed is None else seed
    x0, x1, y0, y1, zu = cfg.region
    scene = []
    for n in range(n_positions):
        prng = stream(seed, _STREAM_POSITION, n)
        pos = np.array([prng.uniform(x0, x1), prng.uniform(y0, y1), zu])
        cols = [[], [], [], []]
        for b in range(cfg.n_bs):
            bs = np.asarray(cfg.bs_positions[b], dtype=float)
            parts = _link_paths(cfg, bs, pos, b, stream(seed, _STREAM_LINK, n, b))
            for c, v in zip(cols, parts):
                c.append(v)
        scene.append(ChannelRealization(
            user=n % cfg.n_users, position=pos,
            gains=np.array(cols[0], dtype=complex), delays=np.array(cols[1]),
            azimuths=np.array(cols[2]), elevations=np.array(cols[3])))
    return scene


def beam_response(h, g, p_tr: float, noise_var: float, rng: np.random.Generator | None = None,
                  uplink: bool = False):
    """Noisy estimate of a beam response.

    Downlink returns ``h^H g``, uplink ``g^H h``; both plus CN(0, noise_var/p_tr).
    ``h`` may carry leading batch dimensions (last axis = antennas).
    """
    if p_tr <= 0:
        raise ValueError("training power must be positive")
    h = np.asarray(h)
    g = np.asarray(g)
    true = np.tensordot(h.conj(), g, axes=([-1], [0]))
    if uplink:
        true = np.conj(true)
    if noise_var == 0 or rng is None:
        return true
    scale = math.sqrt(noise_var / p_tr / 2)
    shape = np.shape(true)
    noise = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return true + noise


def group_responses(per_subcarrier, group_map) -> np.ndarray:
    """Average per-subcarrier responses within each subcarrier group.

    ``per_subcarrier`` has the subcarrier axis last; ``group_map[k]`` is the
    group of subcarrier ``k``. Groups are numbered ``0..G-1`` and all must be
    non-empty.
    """
    x = np.asarray(per_subcarrier)
    gm = np.asarray(group_map)
    if x.shape[-1] != len(gm):
        raise ValueError("group_map length does not match the subcarrier axis")
    n_groups = int(gm.max()) + 1 if len(gm) else 0
    counts = np.bincount(gm, minlength=n_groups)
    if n_groups == 0 or np.any(counts == 0):
        raise ValueError("every subcarrier group must be non-empty")
    onehot = np.zeros((len(gm), n_groups))
    onehot[np.arange(len(gm)), gm] = 1.0 / counts[gm]
    return x @ onehot


@dataclass
class BeamResponseTable:
    """Group-averaged responses, shape ``(n_bs, n_probes + M, groups)``.

    Beam axis position ``j`` maps to beam index ``i = j - n_probes + 1``:
    the first ``n_probes`` slots are probing beams, the rest the M narrow beams.
    """
    responses: np.ndarray
    training_power: float
    n_probes: int

    @property
    def probes(self) -> np.ndarray:
        return self.responses[:, :self.n_probes, :]

    @property
    def narrow(self) -> np.ndarray:
        return self.responses[:, self.n_probes:, :]


def measure(cfg: ScenarioConfig, real: ChannelRealization, probes: Sequence[np.ndarray],
            codebook: np.ndarray, uplink: bool, index: int, noiseless: bool = False,
            seed: int | None = None) -> BeamResponseTable:
    """Beam-train every probing and narrow beam of every BS for one position."""
    seed = cfg.seed if seed is None else seed
    p_tr = cfg.train_power_ul if uplink else cfg.train_power_dl
    h = real.channels(cfg)
    gm = cfg.group_map()
    out = np.empty((cfg.n_bs, cfg.n_probes + cfg.n_antennas, cfg.groups_per_user), dtype=complex)
    for b in range(cfg.n_bs):
        beams = np.concatenate([probes[b], codebook], axis=1)
        rng = None if noiseless else stream(seed, _STREAM_MEASURE, int(uplink), index, b)
        r = beam_response(h[b], beams, p_tr, cfg.noise_var, rng, uplink=uplink)  # (K_u, beams)
        out[b] = group_responses(r.T, gm)
    return BeamResponseTable(out, p_tr, cfg.n_probes)


def write_channel_csv(path, scene: Sequence[ChannelRealization]) -> None:
    """Dump a scene as one CSV row per path; ``u`` is the position index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for n, r in enumerate(scene):
            for b in range(r.gains.shape[0]):
                for l in range(r.n_paths):
                    g = r.gains[b, l]
                    w.writerow([b, n, l, repr(float(g.real)), repr(float(g.imag)), repr(float(r.delays[b, l])),
                                repr(float(r.azimuths[b, l])), repr(float(r.elevations[b, l])),
                                *(repr(float(v)) for v in r.position)])


def read_channel_csv(path, cfg: ScenarioConfig) -> list[ChannelRealization]:
    """Parse a channel dump written by :func:`write_channel_csv` or an external tracer.

    Every position must carry all ``n_bs`` links with exactly ``n_paths`` paths
    each; violations raise ``ValueError`` naming the offending line.
    """
    rows: dict[int, dict[int, dict[int, tuple]]] = {}
    pos: dict[int, tuple] = {}
    first_line: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ValueError(f"line 1: expected header {','.join(_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CSV_HEADER):
                raise ValueError(f"line {lineno}: expected {len(_CSV_HEADER)} fields, got {len(row)}")
            try:
                b, u, l = int(row[0]), int(row[1]), int(row[2])
                vals = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if not 0 <= b < cfg.n_bs:
                raise ValueError(f"line {lineno}: BS index {b} out of range")
            if not 0 <= l < cfg.n_paths:
                raise ValueError(f"line {lineno}: path index {l} exceeds n_paths={cfg.n_paths}")
            link = rows.setdefault(u, {}).setdefault(b, {})
            if l in link:
                raise ValueError(f"line {lineno}: duplicate path (b={b}, u={u}, l={l})")
            link[l] = (complex(vals[0], vals[1]), vals[2], vals[3], vals[4])
            pos.setdefault(u, tuple(vals[5:8]))
            first_line.setdefault(u, lineno)
    scene = []
    for u in sorted(rows):
        links = rows[u]
        for b in range(cfg.n_bs):
            if b not in links:
                raise ValueError(f"line {first_line[u]}: position {u} is missing link to BS {b}")
            if len(links[b]) != cfg.n_paths:
                raise ValueError(f"line {first_line[u]}: position {u}, BS {b} has "
                                 f"{len(links[b])} paths, expected {cfg.n_paths}")
        arr = [[links[b][l] for l in range(cfg.n_paths)] for b in range(cfg.n_bs)]
        scene.append(ChannelRealization(
            user=u % cfg.n_users, position=np.array(pos[u]),
            gains=np.array([[p[0] for p in link] for link in arr]),
            delays=np.array([[p[1] for p in link] for link in arr]),
            azimuths=np.array([[p[2] for p in link] for link in arr]),
            elevations=np.array([[p[3] for p in link] for link in arr])))
    return scene
