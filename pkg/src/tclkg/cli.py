"""Command-line front end: ``tclkg {run-example,expand,verify,sweep}``."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ParseError, ValidationError, parse_config
from .experiments import EXPERIMENTS, run_error_scaling, run_nonlinear_example, run_wick_rotation
from .models import ResonanceFluorescenceModel
from .tcl import expansion_text

ZERO_F = (lambda E: 0.0, lambda E: 0.0)
QUADRATIC_F = (lambda E: 0.1 * E**2, lambda E: 0.2 * E)


def _model(cfg, wick=False):
    m = cfg.model
    if wick:
        # the rotation flips the sign of the bare rate at zero temperature
        return ResonanceFluorescenceModel(omega=m.omega, gamma0=-abs(m.gamma0), n_thermal=0.0)
    return ResonanceFluorescenceModel(m.omega, m.gamma0, m.n_thermal, m.high_temperature, m.gamma)


def _initial(cfg, names, defaults):
    values = cfg.projector.initial or defaults
    if len(values) != len(defaults):
        raise ValidationError("projector.initial", f"expected {len(defaults)} values ({', '.join(names)})")
    return dict(zip(names, values))


def run_named(name, cfg, out_dir, lams=None):
    """Run one named experiment with parameters from ``cfg``; returns its report."""
    s = cfg.solver
    lams = cfg.model.lambda_list if lams is None else lams
    common = {"tol": s.tol, "n_grid": s.n_grid, "out_dir": out_dir}
    if name == "error-scaling":
        init = _initial(cfg, ("Ex0", "Ez0"), (0.3, 0.5))
        report = run_error_scaling(_model(cfg), lams=lams, t_max=s.t_max, **init, **common)
    elif name == "wick-rotation":
        init = _initial(cfg, ("Ex0", "Ez0"), (0.3, 0.5))
        T = 3.0 if s.t_max is None else s.t_max
        report = run_wick_rotation(_model(cfg, wick=True), lams=cfg.model.wick_lambda_list, T=T, **init,
                                   tol=s.tol, n_grid=max(s.n_grid, 601), out_dir=out_dir)
    elif name == "nonlinear":
        init = _initial(cfg, ("E0",), (0.25,))
        gamma = cfg.model.gamma if cfg.model.gamma is not None else _model(cfg).gamma
        # the f-invariance check compares the configured f with the other selector
        f, f_alt = (ZERO_F, QUADRATIC_F) if cfg.projector.f == "zero" else (QUADRATIC_F, ZERO_F)
        report = run_nonlinear_example(cfg.projector.alpha, lams=lams, omega=cfg.model.omega, gamma=gamma, t_max=s.t_max,
                                       f=f, f_alt=f_alt, **init, **common)
    else:
        raise ValidationError("run-example", f"unknown example {name!r}; known: {', '.join(EXPERIMENTS)}")
    report.write_summary(Path(out_dir) / f"{cfg.output.prefix}{name}_summary.csv")
    return report


def _emit(reports, stream=None):
    stream = stream or sys.stdout
    failures = []
    for report in reports:
        for line in report.summary_lines():
            print(line, file=stream)
        failures += [
            {"experiment": report.name, "metric": m.name, "value": m.value, "tolerance": m.tolerance}
            for m in report.metrics
            if not m.passed
        ]
    return failures


def _finish(failures):
    if failures:
        print(json.dumps({"status": "fail", "failures": failures}), file=sys.stderr)
        return 1
    return 0


def cmd_run_example(args, cfg):
    report = run_named(args.name, cfg, args.out)
    return _finish(_emit([report]))


def cmd_expand(args, cfg):
    order = args.order if args.order is not None else cfg.solver.n_max
    if order < 1:
        raise ValidationError("--order", "must be >= 1")
    print("# Mc = checked M, Mt = tilde M, Mct = checked tilde M")
    for which in ("K", "I"):
        terms = expansion_text(order, which)
        print(f"{which}_{order} = " + " ".join(terms))
        for term in terms:
            print(f"  {term}")
    return 0


def cmd_verify(args, cfg):
    from .checks import run_verify

    seed = args.seed
    print(f"# verify seed = {seed}")
    print("check,value,tolerance,status")
    failures = []
    for r in run_verify(seed=seed):
        print(f"{r.name},{r.value:.17g},{r.tolerance},{'PASS' if r.passed else 'FAIL'}")
        if not r.passed:
            failures.append({"check": r.name, "value": r.value, "tolerance": r.tolerance})
    return _finish(failures)


def _sweep_member(item):
    name, cfg, out = item
    return run_named(name, cfg, out)


def cmd_sweep(args, cfg):
    names = ("error-scaling", "nonlinear")
    items = [(name, cfg, str(Path(args.out) / name)) for name in names]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_sweep_member, items))
    else:
        reports = [_sweep_member(item) for item in items]
    return _finish(_emit(reports))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("--order", type=int, help="expansion order")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    parser = argparse.ArgumentParser(prog="tclkg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run-example", parents=[common], help="run one resonance-fluorescence experiment")
    run.add_argument("name", choices=sorted(EXPERIMENTS))
    run.set_defaults(func=cmd_run_example)
    sub.add_parser("expand", parents=[common], help="print the composition sums for K_n and I_n").set_defaults(func=cmd_expand)
    sub.add_parser("verify", parents=[common], help="run the invariant suite").set_defaults(func=cmd_verify)
    sub.add_parser("sweep", parents=[common], help="run the coupling sweeps").set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.out:
            cfg = cfg.with_output(args.out)
        args.out = cfg.output.directory
        return args.func(args, cfg)
    except (ParseError, ValidationError) as exc:
        print(json.dumps({"status": "error", "kind": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
