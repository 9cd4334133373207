"""Figure-style SVG plots from a results CSV."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KINDS = {
    # kind: (x column, accepted sweep params, x label)
    "size": ("n_train", None, "training samples N"),
    "power": ("sweep_value", ("p_tr_dl", "p_tr_ul", "p_dl_total"), "power (W)"),
    "rounds": ("sweep_value", ("t_max",), "iterations t_max"),
    "speed": ("sweep_value", ("speed_mph",), "user speed (mph)"),
}
_REQUIRED = ["scheme", "n_train", "seed", "se_ave_eff"]


def _curves(rows, kind):
    xcol, params, _ = KINDS[kind]
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if params is not None and r.get("sweep_param") not in params:
            continue
        y = float(r["se_ave_eff"])
        if y != y:
            continue
        acc[r["scheme"]][float(r[xcol])].append(y)
    return {s: sorted((x, sum(v) / len(v)) for x, v in pts.items()) for s, pts in acc.items()}


def plot_results(csv_path, kind: str, out_path=None) -> Path:
    """Mean ``se_ave_eff`` per scheme against the chosen x axis, one curve per scheme.

    Raises ``ValueError`` (and writes nothing) on an empty CSV, missing columns
    or no rows for the requested kind.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {sorted(KINDS)}")
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    if not header or not rows:
        raise ValueError(f"{csv_path}: empty results file")
    need = _REQUIRED + (["sweep_param", "sweep_value"] if KINDS[kind][1] else [])
    missing = [c for c in need if c not in header]
    if missing:
        raise ValueError(f"{csv_path}: missing columns {missing}")
    curves = _curves(rows, kind)
    if not curves:
        raise ValueError(f"{csv_path}: no rows usable for a {kind!r} plot")
    out = Path(out_path) if out_path else Path(csv_path).with_name(f"{Path(csv_path).stem}_{kind}.svg")
    with plt.rc_context({"svg.hashsalt": "cfbeam", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for s in sorted(curves):
            xs, ys = zip(*curves[s])
            ax.plot(xs, ys, marker="o", label=s)
        ax.set_xlabel(KINDS[kind][2])
        ax.set_ylabel("SE_ave_eff (bps/Hz)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
