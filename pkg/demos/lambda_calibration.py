"""Pick the ridge penalty on a held-out validation split.

The default 2^-3 sits on the interpolation peak when the training size is
close to the node count; this sweep shows the effect and picks a value.

    python demos/lambda_calibration.py
"""
import numpy as np

from cfbeam import bl, scene
from cfbeam import dataset as dsm

cfg = scene.ScenarioConfig(n_subcarriers=256, subcarriers_per_user=16, groups_per_user=4)
sc = scene.gen_scene(cfg, 2000, seed=1)
ds = dsm.build_samples(sc, cfg, scene.make_probing_beams(cfg), scene.dft_codebook(8, 4), "user")
train, rest = dsm.split_train_test(ds, 0.6, seed=1)
val, _ = dsm.split_train_test(rest, 0.5, seed=2)

best = None
for k in range(-9, 4):
    lam = 2.0 ** k
    for E in (300, 500, 1000):
        m = bl.fit(train.X, train.Y, bl.BLArchitecture(enhance_nodes=E, lam=lam), n_bs=cfg.n_bs)
        acc = float(np.mean(m.predict(val.X) == val.best_beams()))
        print(f"lam=2^{k:<3d} E={E:<5d} per-link accuracy {acc:.3f}")
        if best is None or acc > best[0]:
            best = (acc, k, E)
print(f"best: lam=2^{best[1]}, E={best[2]} ({best[0]:.3f}) with N={len(train)} training samples")
