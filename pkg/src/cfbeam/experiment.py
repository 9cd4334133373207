"""Experiment specs (TOML), orchestration and artifact writing."""
from __future__ import annotations

import csv
import dataclasses
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import bl, consensus, split
from .dataset import build_samples, split_train_test
from .evaluation import GainTable, SchemeResult, failed, genie_indices, score, training_time
from .scene import ScenarioConfig, dft_codebook, gen_scene, make_probing_beams
from .schemes import ALL_SCHEMES, BS_SCHEMES, USER_SCHEMES, SchemeParams, run_scheme

WORKERS_ENV = "CFBEAM_WORKERS"
SWEEP_PARAMS = ("none", "p_tr_dl", "p_tr_ul", "p_dl_total", "t_max", "speed_mph")
# T = 2890.8 / v reproduces both quoted coherence times (144.54 ms at 20 mph, 48.18 ms at 60 mph)
_COHERENCE_MPH_MS = 2890.8


class SpecError(ValueError):
    """Invalid experiment spec; the message starts with the offending field path."""


def coherence_time_ms(speed_mph: float) -> float:
    if speed_mph <= 0:
        raise ValueError("speed must be positive")
    return _COHERENCE_MPH_MS / speed_mph


@dataclass(frozen=True)
class ArchSpec:
    n_feature_groups: int = 10
    feature_nodes: int = 20
    n_enhance_groups: int = 1
    enhance_nodes: int = 0  # 0: 500 below 1000 training samples, else 1500
    lam_user: float = 2.0 ** -3
    lam_bs: float = 2.0 ** -9
    enhance_scale: float | None = None

    def build(self, n_train: int, side: str, seed: int) -> bl.BLArchitecture:
        E = self.enhance_nodes or (500 if n_train < 1000 else 1500)
        lam = self.lam_user if side == "user" else self.lam_bs
        return bl.BLArchitecture(self.n_feature_groups, self.feature_nodes, self.n_enhance_groups, E,
                                 lam, seed, self.enhance_scale)


@dataclass(frozen=True)
class Sweep:
    param: str = "none"
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    arch: ArchSpec = field(default_factory=ArchSpec)
    schemes: tuple = ("genie", "exhaustive_dl", "FDBL", "FCBL", "CBL", "ICBL")
    scheme_params: dict = field(default_factory=dict)
    train_sizes: tuple = (250, 500, 1000)
    repetitions: int = 1
    seed: int = 0
    n_positions: int = 2000
    test_fraction: float = 0.3
    output_dir: str = "results"
    sweep: Sweep = field(default_factory=Sweep)

    def params(self, scheme: str) -> SchemeParams:
        if scheme in self.scheme_params:
            return self.scheme_params[scheme]
        # defaults: 10 user-side rounds, 5 BS-side rounds
        return SchemeParams(t_max=5) if scheme in BS_SCHEMES else SchemeParams()


# --- (de)serialization ------------------------------------------------------

def _coerce(path: str, value, annotation: str, default):
    ann = str(annotation)
    if value is None:
        raise SpecError(f"{path}: null values are not allowed")
    if "tuple" in ann or isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise SpecError(f"{path}: expected an array")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            raise SpecError(f"{path}: expected a boolean")
        return value
    if ann.startswith("int") and "float" not in ann:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SpecError(f"{path}: expected an integer")
        return value
    if "float" in ann:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecError(f"{path}: expected a number")
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise SpecError(f"{path}: expected a string")
        return value
    return value


def _from_table(cls, table, path: str):
    if not isinstance(table, dict):
        raise SpecError(f"{path}: expected a table")
    flds = {f.name: f for f in dataclasses.fields(cls)}
    for k in table:
        if k not in flds:
            raise SpecError(f"{path}.{k}: unknown key")
    kw = {}
    for k, v in table.items():
        f = flds[k]
        default = f.default if f.default is not dataclasses.MISSING else None
        kw[k] = _coerce(f"{path}.{k}", v, f.type, default)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise SpecError(f"{path}: {e}") from None


def _to_table(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


_TOP_KEYS = ("experiment", "scenario", "arch", "scheme_params", "sweep")
_EXPERIMENT_KEYS = ("schemes", "train_sizes", "repetitions", "seed", "n_positions", "test_fraction",
                    "output_dir")


def spec_from_dict(d: dict) -> ExperimentSpec:
    for k in d:
        if k not in _TOP_KEYS:
            raise SpecError(f"{k}: unknown key")
    ex = d.get("experiment", {})
    if not isinstance(ex, dict):
        raise SpecError("experiment: expected a table")
    kw = {}
    defaults = ExperimentSpec()
    hints = {f.name: f for f in dataclasses.fields(ExperimentSpec)}
    for k, v in ex.items():
        if k not in _EXPERIMENT_KEYS:
            raise SpecError(f"experiment.{k}: unknown key")
        kw[k] = _coerce(f"experiment.{k}", v, hints[k].type, getattr(defaults, k))
    if "scenario" in d:
        kw["scenario"] = _from_table(ScenarioConfig, d["scenario"], "scenario")
    if "arch" in d:
        kw["arch"] = _from_table(ArchSpec, d["arch"], "arch")
    if "sweep" in d:
        kw["sweep"] = _from_table(Sweep, d["sweep"], "sweep")
    sp = d.get("scheme_params", {})
    if not isinstance(sp, dict):
        raise SpecError("scheme_params: expected a table")
    params = {}
    for name, tab in sp.items():
        if name not in ALL_SCHEMES:
            raise SpecError(f"scheme_params.{name}: unknown scheme")
        params[name] = _from_table(SchemeParams, tab, f"scheme_params.{name}")
    kw["scheme_params"] = params
    spec = ExperimentSpec(**kw)
    validate_spec(spec)
    return spec


def validate_spec(spec: ExperimentSpec) -> None:
    for i, s in enumerate(spec.schemes):
        if s not in ALL_SCHEMES:
            raise SpecError(f"experiment.schemes[{i}]: unknown scheme {s!r}")
    if len(set(spec.schemes)) != len(spec.schemes):
        raise SpecError("experiment.schemes: duplicate entries")
    if not spec.train_sizes or any(int(n) < 2 for n in spec.train_sizes):
        raise SpecError("experiment.train_sizes: need sizes >= 2")
    if spec.repetitions < 1:
        raise SpecError("experiment.repetitions: must be >= 1")
    if not 0 < spec.test_fraction < 1:
        raise SpecError("experiment.test_fraction: must lie in (0, 1)")
    pool = spec.n_positions - int(round(spec.test_fraction * spec.n_positions))
    if max(spec.train_sizes) > pool:
        raise SpecError(f"experiment.train_sizes: {max(spec.train_sizes)} exceeds the training pool of {pool}")
    if spec.sweep.param not in SWEEP_PARAMS:
        raise SpecError(f"sweep.param: must be one of {SWEEP_PARAMS}")
    if spec.sweep.param != "none" and not spec.sweep.values:
        raise SpecError("sweep.values: empty sweep")
    for name, p in spec.scheme_params.items():
        if p.mode not in consensus.MODES:
            raise SpecError(f"scheme_params.{name}.mode: must be one of {consensus.MODES}")
        if p.rho <= 0:
            raise SpecError(f"scheme_params.{name}.rho: must be positive")
        if p.t_max < 0:
            raise SpecError(f"scheme_params.{name}.t_max: must be >= 0")
        if p.budget is not None and not 1 <= p.budget <= spec.scenario.n_bs * spec.scenario.n_antennas:
            raise SpecError(f"scheme_params.{name}.budget: must lie in 1..B*M")
        if not 0 <= p.inc_fraction < 1:
            raise SpecError(f"scheme_params.{name}.inc_fraction: must lie in [0, 1)")
    if spec.arch.lam_user <= 0 or spec.arch.lam_bs <= 0:
        raise SpecError("arch: lam_user and lam_bs must be positive")


def spec_to_dict(spec: ExperimentSpec) -> dict:
    ex = {k: getattr(spec, k) for k in _EXPERIMENT_KEYS}
    ex["schemes"] = list(spec.schemes)
    ex["train_sizes"] = list(spec.train_sizes)
    d = {"experiment": ex, "scenario": _to_table(spec.scenario), "arch": _to_table(spec.arch)}
    if spec.sweep.param != "none":
        d["sweep"] = _to_table(spec.sweep)
    if spec.scheme_params:
        d["scheme_params"] = {k: _to_table(v) for k, v in spec.scheme_params.items()}
    return d


def dumps_spec(spec: ExperimentSpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec))


def loads_spec(text: str) -> ExperimentSpec:
    try:
        d = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise SpecError(f"<toml>: {e}") from None
    return spec_from_dict(d)


def load_spec(path) -> ExperimentSpec:
    return loads_spec(Path(path).read_text())


# --- running ---------------------------------------------------------------

@dataclass
class RepetitionOutput:
    results: list
    files: dict  # relative path -> bytes


def _family(scheme: str) -> str:
    if scheme in USER_SCHEMES:
        return "user"
    if scheme in BS_SCHEMES:
        return "bs"
    return scheme


def _ledger_csv(ledger: consensus.OverheadLedger) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "phase", "sent", "received"])
    nodes = sorted(set(ledger.sent) | set(ledger.received))
    for n in nodes:
        phases = sorted(set(ledger.sent.get(n, {})) | set(ledger.received.get(n, {})))
        for p in phases:
            w.writerow([n, p, ledger.sent.get(n, {}).get(p, 0), ledger.received.get(n, {}).get(p, 0)])
    return buf.getvalue().encode()


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _artifacts(tag: str, scheme: str, artifacts: dict, files: dict):
    if "ledger" in artifacts:
        files[f"ledgers/{tag}.csv"] = _ledger_csv(artifacts["ledger"])
    m = artifacts.get("model")
    if isinstance(m, consensus.UserSideModel):
        files[f"traces/{tag}_rounds.csv"] = _csv_bytes(
            ["round", "user", "primal_residual", "dual_residual", "obj"],
            [[r.round, r.user, format(r.primal_residual, ".17g"), format(r.dual_residual, ".17g"),
              format(r.obj, ".17g")] for r in m.trace])
        for u in range(m.n_users):
            mdl = m.model(u)
            mdl.C_cache = None
            files[f"models/{tag}_u{u}.blm"] = bl.dumps_model(mdl)
    elif isinstance(m, split.BSSideModel):
        tr = artifacts["transport"].trace
        files[f"traces/{tag}_fronthaul.csv"] = _csv_bytes(
            ["round", "node", "direction", "reals", "sparsity_budget"],
            [[r.round, r.node, r.direction, r.reals, r.sparsity_budget] for r in tr])
        for b in range(m.n_bs):
            mdl = bl.BLModel(m.arch, m.layers[b], m.normalizers[b], m.W[b], None, m.n_bs)
            files[f"models/{tag}_b{b}.blm"] = bl.dumps_model(mdl)
    for i, mdl in enumerate(artifacts.get("models", [])):
        files[f"models/{tag}_{i}.blm"] = bl.dumps_model(mdl)


def _sweep_values(spec: ExperimentSpec):
    return [None] if spec.sweep.param == "none" else list(spec.sweep.values)


def run_repetition(spec: ExperimentSpec, rep: int) -> RepetitionOutput:
    """Everything for one repetition (seed ``spec.seed + rep``) over all sweep points."""
    seed = spec.seed + rep
    results, files = [], {}
    base_cfg = dataclasses.replace(spec.scenario, seed=seed)
    # one scene per repetition; only a power sweep changes the measurements
    scene = gen_scene(base_cfg, spec.n_positions, seed)
    codebook = dft_codebook(base_cfg.n_rows, base_cfg.n_cols)
    data_cache = {}
    for sv in _sweep_values(spec):
        cfg = base_cfg
        param = spec.sweep.param
        if param in ("p_tr_dl", "p_tr_ul", "p_dl_total"):
            cfg = dataclasses.replace(base_cfg, **{param: float(sv)})
        elif param == "speed_mph":
            cfg = dataclasses.replace(base_cfg, tracking_period_ms=coherence_time_ms(float(sv)))
        key = (cfg.p_tr_dl, cfg.p_tr_ul, cfg.p_dl_total)
        if key not in data_cache:
            data_cache[key] = _prepare(cfg, scene, codebook, spec, seed)
        prep = data_cache[key]
        for n_train in spec.train_sizes:
            for scheme in spec.schemes:
                tag = f"{scheme}_n{n_train}_s{seed}" + ("" if sv is None else f"_{param}{sv}")
                try:
                    r, arts = _run_one(scheme, n_train, seed, cfg, prep, spec, param, sv)
                    _artifacts(tag, scheme, arts, files)
                except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
                    r = failed(scheme, n_train, seed, e)
                r.sweep = (param, "" if sv is None else sv)
                results.append(r)
    return RepetitionOutput(results, files)


def _prepare(cfg, scene, codebook, spec, seed):
    probes = make_probing_beams(cfg)
    frac = 1 - spec.test_fraction
    need_user = any(s in USER_SCHEMES or s == "exhaustive_dl" for s in spec.schemes)
    need_bs = any(s in BS_SCHEMES or s == "exhaustive_ul" for s in spec.schemes)
    out = {}
    if need_user:
        out["user"] = split_train_test(build_samples(scene, cfg, probes, codebook, "user"), frac, seed)
    if need_bs:
        out["bs"] = split_train_test(build_samples(scene, cfg, probes, codebook, "bs"), frac, seed)
    any_split = out.get("user") or out.get("bs")
    if any_split is None:
        # genie only: still split so the test set matches other runs
        ds = build_samples(scene, cfg, probes, codebook, "user", noiseless=True)
        any_split = split_train_test(ds, frac, seed)
    test_ids = any_split[1].sample_ids
    test_scene = [scene[i] for i in test_ids]
    ideal = build_samples(test_scene, cfg, probes, codebook, "user", noiseless=True)
    out["genie"] = genie_indices(ideal.rates)
    out["table"] = GainTable(test_scene, cfg, codebook)
    return out


def _run_one(scheme, n_train, seed, cfg, prep, spec, param, sv):
    table = prep["table"]
    table.cfg = cfg  # tracking period may differ across speed sweep points
    genie = prep["genie"]
    B, M, N_W, Tb = cfg.n_bs, cfg.n_antennas, cfg.n_probes, cfg.beam_time_ms
    if scheme == "genie":
        return score(scheme, n_train, seed, genie, 0.0, table, genie), {}
    if scheme == "exhaustive_dl":
        test = prep["user"][1]
        return score(scheme, n_train, seed, test.best_beams(), training_time("exhaustive_dl", B, M, N_W, Tb),
                     table, genie), {}
    if scheme == "exhaustive_ul":
        test = prep["bs"][1]
        return score(scheme, n_train, seed, test.best_beams(), training_time("exhaustive_ul", B, M, N_W, Tb),
                     table, genie), {}
    side = "user" if scheme in USER_SCHEMES else "bs"
    train, test = prep[side]
    if n_train > len(train):
        raise ValueError(f"training pool holds {len(train)} samples, {n_train} requested")
    train = train.head(n_train)
    params = spec.params(scheme)
    if param == "t_max":
        params = dataclasses.replace(params, t_max=int(sv))
    arch = spec.arch.build(n_train, side, seed)
    out = run_scheme(scheme, train, test, arch, cfg.n_users, params)
    r = score(scheme, n_train, seed, out.indices, training_time(_family(scheme), B, M, N_W, Tb),
              table, genie, out.overhead)
    return r, out.artifacts


def results_csv_bytes(results, with_sweep: bool) -> bytes:
    header = ["scheme", "n_train", "seed", "se_ave_eff", "ba_success", "overhead_reals", "T_r_ms"]
    if with_sweep:
        header += ["sweep_param", "sweep_value"]
    rows = []
    for r in results:
        row = r.row()
        if with_sweep:
            row += [r.sweep[0], r.sweep[1]]
        rows.append(row)
    return _csv_bytes(header, rows)


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise SpecError(f"{WORKERS_ENV}: expected an integer, got {env!r}") from None
        return max(1, n)
    return max(1, min(4, os.cpu_count() or 1))


def run_experiment(spec: ExperimentSpec, output_dir=None, workers: int | None = None) -> list[SchemeResult]:
    """Run every repetition, then write results, errors, traces, ledgers and models."""
    validate_spec(spec)
    out = Path(output_dir or spec.output_dir)
    workers = worker_count() if workers is None else workers
    reps = list(range(spec.repetitions))
    if workers > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(reps))) as ex:
            outputs = list(ex.map(run_repetition, [spec] * len(reps), reps))
    else:
        outputs = [run_repetition(spec, r) for r in reps]
    results = [r for o in outputs for r in o.results]
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.toml").write_text(dumps_spec(spec))
    (out / "results.csv").write_bytes(results_csv_bytes(results, spec.sweep.param != "none"))
    errs = [[r.scheme, r.n_train, r.seed, r.error] for r in results if r.error]
    (out / "errors.csv").write_bytes(_csv_bytes(["scheme", "n_train", "seed", "error"], errs))
    for o in outputs:
        for rel, data in sorted(o.files.items()):
            p = out / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(data)
    return results
