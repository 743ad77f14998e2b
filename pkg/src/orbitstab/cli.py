"""Command line front end.

Subcommands::

    analyze    validate the problem, build frame and linearization, Floquet and gramian reports
    riccati    periodic Riccati solution and the linear orbital feedback
    manifold   stable-manifold trajectories (--x2) and value tables (--grid)
    simulate   closed-loop runs under linear, optimal or tabulated feedback
    reproduce  the acceptance suite for the mass-spring example

Exit codes: 0 success, 1 a check or criterion failed, 2 usage or I/O error,
3 validation error, 4 numerical failure.
"""

import argparse
import dataclasses
import importlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .errors import NumericalFailure, OrbitStabError, ValidationFailure
from .hamilton import build_feedback_table, stable_trajectory, value_and_lagrangian_diagnostic
from .io import atomic_write_text, write_json
from .model import PeriodicOrbit, get_example
from .pipeline import Pipeline
from .sim import ExperimentPlan, run_plan

log = logging.getLogger("orbitstab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4

CONFIG_KEYS = {"example", "factory", "orbit_csv", "period", "R", "grid", "mode", "out", "tol"}


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def load_config(path):
    """Read a JSON config. Keys: ``example`` or ``factory`` ("module:function"
    returning an ExampleProblem), optional ``orbit_csv``, ``period``, ``R``,
    ``grid``, ``mode``, ``out``, ``tol``."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    if ("example" in cfg) == ("factory" in cfg):
        raise UsageError(f"{path}: give exactly one of 'example' or 'factory'")
    base = Path(path).parent
    if "orbit_csv" in cfg:
        cfg["orbit_csv"] = str(base / cfg["orbit_csv"])
    return cfg


def _problem_from(cfg):
    if "factory" in cfg:
        mod, _, fn = cfg["factory"].partition(":")
        try:
            problem = getattr(importlib.import_module(mod), fn)()
        except (ImportError, AttributeError) as exc:
            raise UsageError(f"cannot load factory {cfg['factory']!r}: {exc}") from exc
    else:
        problem = get_example(cfg["example"])
    if "orbit_csv" in cfg:
        orbit = PeriodicOrbit.from_csv(cfg["orbit_csv"], cfg.get("period"))
        problem = dataclasses.replace(problem, orbit=orbit, closed_form=None)
    if "R" in cfg:
        cost = dataclasses.replace(problem.cost, R=np.atleast_2d(np.asarray(cfg["R"], dtype=float)))
        problem = dataclasses.replace(problem, cost=cost)
    return problem


def resolve(args):
    """Merge ``--config`` with command line flags (flags win)."""
    if args.config and args.example:
        raise UsageError("give either --example or --config, not both")
    cfg = load_config(args.config) if args.config else {"example": args.example or "mass-spring"}
    for key in ("grid", "mode", "out", "tol"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg.setdefault("mode", "generic")
    cfg.setdefault("out", "orbitstab-out")
    problem = _problem_from(cfg)
    return cfg, problem


def _pipeline(cfg, problem, validate=True):
    N = int(cfg.get("grid") or 256)
    try:
        pl = Pipeline(problem, cfg["mode"], N)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if validate:
        rep = pl.validation
        if not rep.passed:
            raise ValidationFailure("; ".join(f"{c.name} ({c.residual:.3e})" for c in rep.failures()))
    return pl


def _outdir(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def gnuplot_script(csv_path, x, ys, logy=False, title=""):
    """Plot script for a CSV written by this package (header row, commas)."""
    lines = ["set datafile separator ','", "set key autotitle columnhead", f"set title '{title}'"]
    if logy:
        lines.append("set logscale y")
    plots = ", ".join(f"'{csv_path}' using '{x}':'{y}' with lines" for y in ys)
    lines.append(f"plot {plots}")
    return "\n".join(lines) + "\n"


def _emit(args, summary, out):
    write_json(out / f"{args.command}.json", summary)
    if args.json:
        print(json.dumps(summary, default=float, indent=2))


def cmd_analyze(args):
    cfg, problem = resolve(args)
    pl = _pipeline(cfg, problem, validate=False)
    out = _outdir(cfg)
    rep = pl.validation
    write_json(out / "validation.json", rep.to_dict())
    if not rep.passed:
        raise ValidationFailure("; ".join(f"{c.name} ({c.residual:.3e})" for c in rep.failures()))
    if pl.mode == "generic":
        pl.frame.to_csv(out / "frame.csv")
    pl.lin.to_csv(out / "linearization.csv")
    mono = pl.ham_monodromy
    write_json(out / "monodromy.json", mono.to_dict())
    gram = {k: v.to_dict() for k, v in pl.gramians.items()}
    write_json(out / "gramians.json", gram)
    split_ok = mono.n_inside == pl.lin.d and mono.n_outside == pl.lin.d
    exist_ok = bool((pl.gramians["stabilizable_B2"] or pl.gramians["stabilizable_Rbar"])
                    and pl.gramians["detectable_Q"])
    summary = {"problem": problem.name, "mode": pl.mode, "validation_passed": rep.passed,
               "hamiltonian_split": [mono.n_inside, mono.n_outside], "split_ok": split_ok,
               "stabilizable_detectable": exist_ok, "outputs": str(out)}
    _emit(args, summary, out)
    if not args.json:
        print(f"{problem.name} ({pl.mode}): validation passed, "
              f"hamiltonian multipliers {np.abs(mono.multipliers).round(6).tolist()}, "
              f"stabilizable/detectable: {exist_ok}; reports in {out}")
    return EXIT_OK if split_ok and exist_ok else EXIT_FAIL


def cmd_riccati(args):
    cfg, problem = resolve(args)
    pl = _pipeline(cfg, problem)
    out = _outdir(cfg)
    from .riccati import solve_periodic_riccati
    tol = cfg.get("tol")
    sol = solve_periodic_riccati(pl.lin, residual_tol=tol) if tol else pl.riccati
    sol.to_csv(out / "riccati_P.csv")
    summary = {"problem": problem.name, "mode": pl.mode, **sol.to_dict(),
               "closed_loop_exponent": float(np.log(np.max(np.abs(sol.closed_loop.multipliers))) / pl.period)}
    write_json(out / "closed_loop.json", summary)
    if args.gnuplot_script:
        atomic_write_text(out / "riccati_P.gp", gnuplot_script(out / "riccati_P.csv", "t", ["P_11"], title="P(t)"))
    _emit(args, summary, out)
    if not args.json:
        mult = ", ".join(f"{abs(z):.6g}" for z in sol.closed_loop.multipliers)
        print(f"P(t) written to {out / 'riccati_P.csv'}; residual {sol.max_residual:.2e}; "
              f"closed-loop multipliers |lambda| = {mult}")
    return EXIT_OK


def cmd_manifold(args):
    cfg, problem = resolve(args)
    pl = _pipeline(cfg, problem)
    out = _outdir(cfg)
    hs, ric = pl.hs, pl.riccati
    d = pl.lin.d
    runs = []
    for i, s in enumerate(args.x2 or []):
        x0 = np.zeros(hs.n)
        x0[0] = args.x1
        x0[1] = s
        tr = stable_trajectory(hs, x0, ric)
        path = out / f"trajectory_{i:02d}.csv"
        tr.to_csv(path)
        runs.append({"x0": x0.tolist(), "csv": str(path), "cost": tr.cost, "max_abs_H": tr.max_abs_H,
                     "terminal_x2": tr.terminal_x2, "fiber_residual": tr.fiber_residual(ric),
                     "horizon_periods": tr.horizon / pl.period, "p0": tr.p0.tolist()})
        if args.gnuplot_script:
            atomic_write_text(out / f"trajectory_{i:02d}.gp",
                              gnuplot_script(path, "t", ["x2_1", "p2_1", "u_1"], title=f"x2(0) = {s:g}"))
    summary = {"problem": problem.name, "mode": pl.mode, "trajectories": runs}
    if args.value_grid:
        n1, n2 = args.value_grid
        x1s = np.arange(n1) * pl.period / n1
        s_max = min(0.3, 0.6 * hs.tube_radius)
        ss = np.linspace(-s_max, s_max, n2)
        table = value_and_lagrangian_diagnostic(hs, ric, x1s, ss)
        table.to_csv(out / "value_table.csv")
        summary["value_table"] = {"csv": str(out / "value_table.csv"),
                                  "max_loop_residual": float(np.nanmax(table.loop_residual)),
                                  "failed_points": {str(k): v for k, v in table.errors.items()}}
    _emit(args, summary, out)
    if not args.json:
        for r in runs:
            print(f"x0 = {r['x0']}: cost {r['cost']:.6g}, max|H| {r['max_abs_H']:.2e}, "
                  f"|x2(Tf)| {r['terminal_x2']:.2e} -> {r['csv']}")
        if "value_table" in summary:
            print(f"value table -> {summary['value_table']['csv']} "
                  f"(max loop residual {summary['value_table']['max_loop_residual']:.2e})")
    ok = all(r["max_abs_H"] < 1e-6 for r in runs) and not summary.get("value_table", {}).get("failed_points")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args):
    cfg, problem = resolve(args)
    pl = _pipeline(cfg, problem)
    out = _outdir(cfg)
    if args.z0 is not None and args.x0 is not None:
        raise UsageError("give either --z0 or --x0")
    if args.z0 is not None:
        coords, ics = "original", [args.z0]
    elif args.x0 is not None:
        coords, ics = "transverse", [args.x0]
    else:
        raise UsageError("an initial condition is required (--z0 or --x0)")
    if coords == "original" and pl.mode != "generic":
        raise UsageError("--z0 needs --mode generic; use --x0 for transverse initial conditions")
    feedbacks = []
    for name in args.feedback.split(","):
        if name in ("linear", "optimal"):
            feedbacks.append(name)
        elif name == "table":
            x1s = np.arange(16) * pl.period / 16
            s_max = min(0.4, 0.8 * pl.hs.tube_radius)
            table = build_feedback_table(pl.hs, pl.riccati, x1s, np.linspace(-s_max, s_max, 9), pl.feedback)
            feedbacks.append(("table", table))
        else:
            raise UsageError(f"unknown feedback {name!r}")
    plan = ExperimentPlan(pl, ics, coords, tuple(feedbacks), args.periods * pl.period, str(out))
    res = run_plan(plan)
    summary = res.to_dict()
    summary["floquet_exponent"] = pl.closed_loop_exponent
    if args.gnuplot_script:
        for r in res.runs:
            if r.csv and r.feedback != "optimal":
                atomic_write_text(Path(r.csv).with_suffix(".gp"),
                                  gnuplot_script(r.csv, "t", ["dist"], logy=True, title=r.feedback))
    _emit(args, summary, out)
    if not args.json:
        for r in res.runs:
            print(f"{r.feedback}: status {r.status}, final distance {r.final_dist:.3e}, "
                  f"decay exponent {r.decay_exp:.4g} (Floquet {pl.closed_loop_exponent:.4g}), "
                  f"cost {r.cost:.6g}{' ' + r.error if r.error else ''}")
    if any(r.status != "ok" for r in res.runs):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_reproduce(args):
    if args.config or (args.example and args.example != "mass-spring"):
        raise UsageError("reproduce runs the built-in mass-spring example only")
    results = acceptance.run_all(tol_scale=args.tol_scale)
    table = {"tol_scale": args.tol_scale, "passed": all(r.passed for r in results),
             "criteria": [r.to_dict() for r in results]}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "acceptance.json", table)
    if args.json:
        print(json.dumps(table, default=float, indent=2))
    else:
        for r in results:
            print(r.line())
        print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if table["passed"] else EXIT_FAIL


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--example", help="built-in problem name (mass-spring, oscillator-3d)")
    common.add_argument("--config", help="JSON problem/config file")
    common.add_argument("--out", help="output directory (default orbitstab-out)")
    common.add_argument("--mode", choices=("generic", "reproduction"),
                        help="transverse model: frame-based (default) or the closed-form one")
    common.add_argument("--json", action="store_true", help="print a machine-readable summary")
    common.add_argument("--gnuplot-script", action="store_true", help="also write gnuplot scripts for CSVs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="orbitstab", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="validation, frame, linearization, Floquet")
    a.add_argument("--grid", type=int, help="phase grid size for the linearization (default 256)")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("riccati", parents=[common], help="periodic Riccati solution")
    r.add_argument("--grid", type=int, help="phase grid size (default 256)")
    r.add_argument("--tol", type=float, help="maximum accepted Riccati residual")
    r.set_defaults(func=cmd_riccati)

    m = sub.add_parser("manifold", parents=[common], help="stable-manifold trajectories and value tables")
    m.add_argument("--x2", type=_floats, help="comma-separated transverse offsets x2(0)")
    m.add_argument("--x1", type=float, default=0.0, help="initial phase (default 0)")
    m.add_argument("--grid", dest="value_grid", type=lambda s: tuple(int(v) for v in s.lower().split("x"))
                   if "x" in s.lower() else (int(s), int(s)),
                   help="value table size, N or N1xN2 (phase x offset)")
    m.set_defaults(func=cmd_manifold)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop simulation")
    s.add_argument("--grid", type=int, help="phase grid size (default 256)")
    s.add_argument("--feedback", default="linear", help="linear, optimal, table (comma-separated)")
    s.add_argument("--z0", type=_floats, help="initial state in original coordinates")
    s.add_argument("--x0", type=_floats, help="initial state (x1, x2) in transverse coordinates")
    s.add_argument("--periods", type=float, default=16.0, help="duration in periods (default 16)")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("reproduce", parents=[common], help="acceptance suite for mass-spring")
    q.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance by this factor")
    q.set_defaults(func=cmd_reproduce)
    return p


def _fail(args, code, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, UsageError, OSError) as exc:
        return _fail(args, EXIT_USAGE, exc)
    except ValidationFailure as exc:
        return _fail(args, EXIT_VALIDATION, exc)
    except (NumericalFailure, OrbitStabError) as exc:
        return _fail(args, EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
