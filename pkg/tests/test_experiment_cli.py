import csv

import pytest

from cfbeam import cli, experiment, plotting
from cfbeam.experiment import ArchSpec, ExperimentSpec, SpecError, Sweep
from cfbeam.scene import ScenarioConfig
from cfbeam.schemes import SchemeParams

TINY = """
[experiment]
schemes = ["genie", "exhaustive_dl", "exhaustive_ul", "FDBL", "FCBL", "CBL", "ICBL", "FDBL-BS", "FCBL-BS", "CBL-BS"]
train_sizes = [60, 120]
repetitions = 2
n_positions = 240
seed = 3

[scenario]
n_subcarriers = 256
subcarriers_per_user = 16
groups_per_user = 4

[arch]
enhance_nodes = 40
lam_user = 1.0

[scheme_params.CBL-BS]
t_max = 3
budget = 10

[scheme_params.ICBL]
t_max = 4
node_add = [1, 10]
"""


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


# --- spec parsing ----------------------------------------------------------------------------

def test_coherence_time():
    assert experiment.coherence_time_ms(20) == pytest.approx(144.54)
    assert experiment.coherence_time_ms(60) == pytest.approx(48.18)


@pytest.mark.parametrize("text,where", [
    ("[scenario]\nfoo = 1\n", "scenario.foo"),
    ("[experiment]\ncolour = 1\n", "experiment.colour"),
    ("[weather]\n", "weather"),
    ("[scheme_params.XYZ]\nrho = 1.0\n", "scheme_params.XYZ"),
    ("[scheme_params.CBL]\nrhoo = 1.0\n", "scheme_params.CBL.rhoo"),
    ("[arch]\nlam_user = \"big\"\n", "arch.lam_user"),
    ("[experiment]\nschemes = [\"genie\", \"DNN\"]\n", "experiment.schemes[1]"),
    ("[experiment]\ntrain_sizes = [5000]\n", "experiment.train_sizes"),
    ("[scheme_params.CBL]\nmode = \"mesh\"\n", "scheme_params.CBL.mode"),
    ("[scenario]\nnoise_var = 0.0\n", "scenario"),
    ("[sweep]\nparam = \"t_max\"\n", "sweep.values"),
    ("not toml [", "<toml>"),
])
def test_spec_errors_name_the_field(text, where):
    with pytest.raises(SpecError) as e:
        experiment.loads_spec(text)
    assert str(e.value).startswith(where)


def test_spec_round_trip():
    spec = ExperimentSpec(
        scenario=ScenarioConfig(n_users=3, p_tr_dl=2.0, bs_positions=((0.0, 1.0, 6.0), (1.0, 2.0, 6.0),
                                                                       (3.0, 4.0, 6.0))),
        arch=ArchSpec(enhance_nodes=100, lam_user=0.5, enhance_scale=0.1),
        schemes=("genie", "CBL", "CBL-BS"),
        scheme_params={"CBL": SchemeParams(rho=0.5, mode="BS-relayed"),
                       "CBL-BS": SchemeParams(t_max=5, budget=8)},
        train_sizes=(100, 200), repetitions=3, seed=9,
        sweep=Sweep("t_max", (1, 5, 10)))
    assert experiment.loads_spec(experiment.dumps_spec(spec)) == spec
    default = ExperimentSpec()
    assert experiment.loads_spec(experiment.dumps_spec(default)) == default


def test_worker_env(monkeypatch):
    monkeypatch.setenv(experiment.WORKERS_ENV, "3")
    assert experiment.worker_count() == 3
    monkeypatch.setenv(experiment.WORKERS_ENV, "many")
    with pytest.raises(SpecError):
        experiment.worker_count()


# --- running ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    spec_path = d / "tiny.toml"
    spec_path.write_text(TINY)
    assert cli.main(["run", str(spec_path), "-o", str(d / "a"), "-j", "1"]) == 0
    return spec_path, d


def test_one_row_per_scheme_size_repetition(tiny_run):
    spec_path, d = tiny_run
    rows = read_rows(d / "a" / "results.csv")
    spec = experiment.load_spec(spec_path)
    keys = [(r["scheme"], r["n_train"], r["seed"]) for r in rows]
    want = {(s, str(n), str(3 + r)) for s in spec.schemes for n in spec.train_sizes for r in range(2)}
    assert len(keys) == len(want) and set(keys) == want
    assert list(rows[0]) == ["scheme", "n_train", "seed", "se_ave_eff", "ba_success", "overhead_reals", "T_r_ms"]
    assert read_rows(d / "a" / "errors.csv") == []


def test_result_values_are_sane(tiny_run):
    _, d = tiny_run
    rows = read_rows(d / "a" / "results.csv")
    by = {(r["scheme"], r["n_train"], r["seed"]): r for r in rows}
    for (s, n, seed), r in by.items():
        assert 0 <= float(r["ba_success"]) <= 1
        assert float(r["se_ave_eff"]) <= float(by[("genie", n, seed)]["se_ave_eff"]) + 1e-9 or s != "genie"
    assert by[("genie", "60", "3")]["T_r_ms"] == "0"
    assert by[("exhaustive_dl", "60", "3")]["T_r_ms"] == "46.08"
    assert by[("CBL-BS", "60", "3")]["overhead_reals"] == str(8 * 3 * 60 * 10 + 60 * 32)
    assert by[("CBL", "60", "3")]["overhead_reals"] == str(2 * 10 * 240 * 96)  # D=200+40, O=96, U=2
    assert by[("ICBL", "60", "3")]["overhead_reals"] == str(2 * 4 * 240 * 96 + 2 * 4 * 250 * 96)


def test_artifacts_written(tiny_run):
    _, d = tiny_run
    files = tree(d / "a")
    assert "spec.toml" in files
    assert "ledgers/CBL_n60_s3.csv" in files and "traces/CBL_n60_s3_rounds.csv" in files
    assert "traces/CBL-BS_n120_s4_fronthaul.csv" in files
    assert "models/CBL_n60_s3_u0.blm" in files and files["models/CBL_n60_s3_u0.blm"][:4] == b"BLM1"
    assert experiment.load_spec(d / "a" / "spec.toml") == experiment.load_spec(d / "tiny.toml")


def test_reruns_are_byte_identical_across_worker_counts(tiny_run):
    spec_path, d = tiny_run
    assert cli.main(["run", str(spec_path), "-o", str(d / "b"), "-j", "2"]) == 0
    assert tree(d / "a") == tree(d / "b")


def test_numerical_failure_is_recorded_and_run_continues(tmp_path):
    text = TINY.replace("train_sizes = [60, 120]", "train_sizes = [4]").replace("repetitions = 2", "repetitions = 1")
    text += "inc_fraction = 0.9\n"
    p = tmp_path / "s.toml"
    p.write_text(text)
    assert cli.main(["run", str(p), "-o", str(tmp_path / "o"), "-j", "1"]) == 0
    errs = read_rows(tmp_path / "o" / "errors.csv")
    assert [e["scheme"] for e in errs] == ["ICBL"]
    rows = read_rows(tmp_path / "o" / "results.csv")
    assert len(rows) == 10
    assert [r["se_ave_eff"] for r in rows if r["scheme"] == "ICBL"] == ["nan"]


def test_sweep_adds_columns_and_plots(tmp_path):
    spec = ExperimentSpec(scenario=ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4),
                          arch=ArchSpec(enhance_nodes=20), schemes=("genie", "CBL"), train_sizes=(50,),
                          n_positions=150, sweep=Sweep("t_max", (1, 3)))
    experiment.run_experiment(spec, tmp_path, workers=1)
    rows = read_rows(tmp_path / "results.csv")
    assert [(r["scheme"], r["sweep_param"], r["sweep_value"]) for r in rows] == [
        ("genie", "t_max", "1"), ("CBL", "t_max", "1"), ("genie", "t_max", "3"), ("CBL", "t_max", "3")]
    out = plotting.plot_results(tmp_path / "results.csv", "rounds")
    assert out.exists()
    with pytest.raises(ValueError, match="no rows"):
        plotting.plot_results(tmp_path / "results.csv", "power", tmp_path / "p.svg")
    assert not (tmp_path / "p.svg").exists()


def test_speed_sweep_changes_only_the_factor(tmp_path):
    spec = ExperimentSpec(scenario=ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4),
                          arch=ArchSpec(enhance_nodes=20), schemes=("genie", "exhaustive_dl"), train_sizes=(50,),
                          n_positions=150, sweep=Sweep("speed_mph", (20.0, 60.0)))
    res = experiment.run_experiment(spec, tmp_path, workers=1)
    g20, e20, g60, e60 = (r.se_ave_eff for r in res)
    assert g20 == g60
    assert e20 / e60 == pytest.approx((1 - 46.08 / 144.54) / (1 - 46.08 / 48.18), rel=1e-9)


# --- plotting ------------------------------------------------------------------------------------

def _write(path, rows, header=("scheme", "n_train", "seed", "se_ave_eff")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_plot_empty_csv_errors(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        plotting.plot_results(p, "size", tmp_path / "x.svg")
    _write(p, [])
    with pytest.raises(ValueError, match="empty"):
        plotting.plot_results(p, "size", tmp_path / "x.svg")
    assert not (tmp_path / "x.svg").exists()
    assert cli.main(["plot", str(p), "-o", str(tmp_path / "x.svg")]) == 2
    assert not (tmp_path / "x.svg").exists()


def test_plot_missing_columns(tmp_path):
    p = tmp_path / "r.csv"
    _write(p, [["FDBL", 1, 0]], header=("scheme", "n_train", "seed"))
    with pytest.raises(ValueError, match="se_ave_eff"):
        plotting.plot_results(p, "size")


def test_plot_single_scheme_three_sizes_is_deterministic(tmp_path):
    p = tmp_path / "r.csv"
    _write(p, [["FDBL", n, s, 1.0 + n / 1000 + s] for n in (250, 500, 1000) for s in (0, 1)])
    rows = read_rows(p)
    curves = plotting._curves(rows, "size")
    assert list(curves) == ["FDBL"]
    assert curves["FDBL"] == [(250.0, 1.75), (500.0, 2.0), (1000.0, 2.5)]
    a = plotting.plot_results(p, "size", tmp_path / "a.svg").read_bytes()
    b = plotting.plot_results(p, "size", tmp_path / "b.svg").read_bytes()
    assert a == b and a.lstrip().startswith(b"<?xml")


# --- CLI ----------------------------------------------------------------------------------------

def test_cli_validate(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text(TINY)
    assert cli.main(["validate", str(p)]) == 0
    assert "10 schemes" in capsys.readouterr().out
    p.write_text("[scenario]\nbogus = 1\n")
    assert cli.main(["validate", str(p)]) == 2
    assert "scenario.bogus: unknown key" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.toml")]) == 2


def test_cli_oracles(capsys):
    assert cli.main(["oracle", "mvs-best-sparse"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert cli.main(["oracle", "nope"]) == 2
    assert "unknown oracle" in capsys.readouterr().err


def test_every_oracle_passes():
    from cfbeam import oracles
    comps = oracles.run("all")
    assert len(comps) >= len(oracles.REGISTRY)
    bad = [(c.label, c.error, c.tol) for c in comps if not c.ok]
    assert not bad, bad
