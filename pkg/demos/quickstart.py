"""Train FDBL, FCBL and CBL on a small synthetic scene and score them against the genie.

    python demos/quickstart.py
"""
import numpy as np

from cfbeam import bl, scene
from cfbeam import dataset as dsm
from cfbeam import evaluation as ev
from cfbeam.schemes import SchemeParams, run_scheme

cfg = scene.ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4)
sc = scene.gen_scene(cfg, 1500, seed=0)
probes, cb = scene.make_probing_beams(cfg), scene.dft_codebook(cfg.n_rows, cfg.n_cols)

ds = dsm.build_samples(sc, cfg, probes, cb, side="user")
train, test = dsm.split_train_test(ds, 0.7, seed=0)

# genie and gain table on the test positions
test_scene = [sc[i] for i in test.sample_ids]
genie = ev.genie_indices(dsm.build_samples(test_scene, cfg, probes, cb, "user", noiseless=True).rates)
table = ev.GainTable(test_scene, cfg, cb)

arch = bl.BLArchitecture(enhance_nodes=500, lam=1.0)
T_user = ev.training_time("user", cfg.n_bs, cfg.n_antennas, cfg.n_probes, cfg.beam_time_ms)
T_exh = ev.training_time("exhaustive_dl", cfg.n_bs, cfg.n_antennas, cfg.n_probes, cfg.beam_time_ms)

print(f"{'scheme':<14}{'SE_ave_eff':>12}{'BA success':>12}{'overhead':>12}")
print(f"{'genie':<14}{table.se_ave_eff(genie, 0.0):12.3f}{1.0:12.3f}{0:12d}")
print(f"{'exhaustive_dl':<14}{table.se_ave_eff(test.best_beams(), T_exh):12.3f}"
      f"{ev.ba_success_rate(test.best_beams(), genie):12.3f}{0:12d}")
for name in ("FDBL", "FCBL", "CBL"):
    out = run_scheme(name, train, test, arch, cfg.n_users, SchemeParams(t_max=10))
    print(f"{name:<14}{table.se_ave_eff(out.indices, T_user):12.3f}"
          f"{ev.ba_success_rate(out.indices, genie):12.3f}{float(out.overhead):12.0f}")
