"""Command line: ``cfbeam run|plot|validate|oracle``."""
from __future__ import annotations

import argparse
import sys

from . import experiment, oracles, plotting


def _cmd_run(args) -> int:
    spec = experiment.load_spec(args.spec)
    results = experiment.run_experiment(spec, args.output, args.workers)
    out = args.output or spec.output_dir
    n_err = sum(1 for r in results if r.error)
    print(f"{len(results)} result rows written to {out}/results.csv ({n_err} scheme errors)")
    return 0


def _cmd_plot(args) -> int:
    path = plotting.plot_results(args.csv, args.kind, args.output)
    print(path)
    return 0


def _cmd_validate(args) -> int:
    spec = experiment.load_spec(args.spec)
    print(f"ok: {len(spec.schemes)} schemes, train sizes {list(spec.train_sizes)}, "
          f"{spec.repetitions} repetition(s)")
    return 0


def _cmd_oracle(args) -> int:
    comps = oracles.run(args.name)
    for c in comps:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.label}: error {c.error:.3e} (tol {c.tol:.1e})")
    return 0 if all(c.ok for c in comps) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfbeam", description="Collaborative BL beam alignment experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment spec")
    r.add_argument("spec")
    r.add_argument("-o", "--output", help="output directory (overrides the spec)")
    r.add_argument("-j", "--workers", type=int, help=f"parallel repetitions (default: ${experiment.WORKERS_ENV})")
    r.set_defaults(func=_cmd_run)
    pl = sub.add_parser("plot", help="plot a results CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("--kind", choices=sorted(plotting.KINDS), default="size")
    pl.add_argument("-o", "--output")
    pl.set_defaults(func=_cmd_plot)
    v = sub.add_parser("validate", help="check an experiment spec")
    v.add_argument("spec")
    v.set_defaults(func=_cmd_validate)
    o = sub.add_parser("oracle", help="run a reference comparison")
    o.add_argument("name", help="oracle name or 'all'")
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (experiment.SpecError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
