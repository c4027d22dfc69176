"""Command-line entry point (``wassdro``)."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import instance_io
from .conic import SolveStatus
from .copositive import DEFAULT_SCHEDULE, build_full_problem, delta_refinement, solve_copositive
from .exact_lp import solve_lp
from .formats import export, extension
from .gapstudy import run_gap_study, write_gap_study
from .model import validate
from .newsvendor import NewsvendorConfig, run_newsvendor_study, write_study
from .oracles import SumMaxRecourse, exact_wce_summax, grid_wce, saa_cvar


def _clean(obj):
    """JSON-safe copy: arrays become lists and non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, SolveStatus):
        return str(obj)
    return obj


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(_clean(doc), indent=1, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _seed(cli_seed: int | None, default: int) -> int:
    env = os.environ.get("WASSDRO_SEED", "").strip()
    if env:
        return int(env)
    return default if cli_seed is None else cli_seed


def cmd_validate(args) -> int:
    report = validate(instance_io.load(args.instance))
    for f in report.findings:
        print(f"{f.code}: {f.message}")
    if report.ok:
        print("ok")
    return 0 if report.ok else 1


def cmd_solve(args) -> int:
    p = instance_io.load(args.instance)
    if args.export:
        prog = build_full_problem(p, args.delta)
        target = Path(args.export_path or Path(args.instance).with_suffix(extension(args.export)))
        target.write_text(export(prog, args.export))
        print(f"wrote {target}", file=sys.stderr)
    if args.delta_schedule is not None:
        schedule = DEFAULT_SCHEDULE if args.delta_schedule == "default" else tuple(
            float(d) for d in args.delta_schedule.split(","))
        ref = delta_refinement(p, schedule)
        doc = {"outcome": ref.outcome, "candidate_value": ref.candidate_value, "candidate_x": ref.candidate_x,
               "delta_zero_solved": ref.delta_zero_solved, "monotone": ref.monotone,
               "steps": [{"delta": s.delta, "value": s.value, "status": s.status, "bound": s.bound}
                         for s in ref.steps]}
        _emit(doc, args.output)
        return 0 if ref.outcome == "ok" else 2
    sol = solve_copositive(p, args.delta)
    _emit({"status": sol.status, "value": sol.value, "bound": sol.bound, "delta": sol.delta, "x": sol.x,
           "lambda": sol.lam, "backend_status": sol.backend_status}, args.output)
    return 0 if sol.ok else 2


def cmd_solve_lp(args) -> int:
    p = instance_io.load(args.instance)
    sol = solve_lp(p)
    _emit({"status": sol.status, "value": sol.value, "x": sol.x, "lambda": sol.lam}, args.output)
    return 0 if sol.status is SolveStatus.OPTIMAL else 2


def cmd_oracle(args) -> int:
    if args.kind == "socp":
        doc = json.loads(Path(args.instance).read_text())
        K = len(doc["A"][0])
        r = SumMaxRecourse.classic(doc["A"], doc["b"], doc.get("lower", [0.0] * K), doc.get("upper", [1.0] * K))
        sol = exact_wce_summax(r, doc["samples"], float(doc["epsilon"]))
        _emit({"method": "exact-socp", "value": sol.value, "lambda": sol.lam, "status": sol.status,
               "combinations": sol.combinations}, args.output)
        return 0 if sol.status is SolveStatus.OPTIMAL else 2
    p = instance_io.load(args.instance)
    x = None if args.x is None else np.array([float(v) for v in args.x.split(",")])
    if args.kind == "grid":
        res = grid_wce(p, x, grid_per_dim=args.grid)
        _emit({"method": "grid", "value": res.value, "coarse_value": res.coarse_value,
               "estimate": res.estimate, "lambda": res.lam, "points": res.points}, args.output)
        return 0
    res = saa_cvar(None, args.rho, problem=p, x=x, optimize_x=x is None)
    _emit({"method": "saa-cvar", "value": res.value, "theta": res.theta, "x": res.x, "status": res.status},
          args.output)
    return 0 if res.status == "Optimal" else 2


def cmd_gap_study(args) -> int:
    seed = _seed(args.seed, 0)
    cells, records = run_gap_study(args.k, args.i, seed=seed, trials=args.trials, reduced=not args.full,
                                   degree=args.rule)
    paths = write_gap_study(cells, records, args.out)
    for c in cells:
        print(f"K={c.K} I={c.I} solvable={c.solvable_pct:.0f}% c0_gap={c.c0_gap:.4f}% "
              f"rule_gap={c.rule_gap:.4f}%")
    print(f"wrote {paths['cells']}", file=sys.stderr)
    return 0


def cmd_newsvendor(args) -> int:
    cfg = NewsvendorConfig.from_json(args.config) if args.config else NewsvendorConfig()
    seed = _seed(None, cfg.seed)
    if seed != cfg.seed:
        cfg = NewsvendorConfig.from_dict({**cfg.to_dict(), "seed": seed})
    results, summary = run_newsvendor_study(cfg)
    paths = write_study(results, summary, args.out)
    _emit(summary, None)
    print(f"wrote {paths['csv']}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wassdro", description="Wasserstein two-stage DRO toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="copositive (C0) bound for the joint problem")
    p.add_argument("instance")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--delta", type=float, default=0.0)
    g.add_argument("--delta-schedule", nargs="?", const="default", default=None,
                   help="comma-separated decreasing deltas, optionally ending in 0")
    p.add_argument("--cone", choices=["c0"], default="c0")
    p.add_argument("--export", choices=["cbf", "sdpa"])
    p.add_argument("--export-path")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("solve-lp", help="exact LP for type-1 balls with Q = 0")
    p.add_argument("instance")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_solve_lp)

    p = sub.add_parser("oracle", help="independent reference values")
    p.add_argument("kind", choices=["socp", "grid", "saa"])
    p.add_argument("instance", help="instance JSON (socp: A, b, samples, epsilon, lower, upper)")
    p.add_argument("--x", help="comma-separated first-stage decision")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gap-study", help="C0 and decision-rule gaps against the exact SOCP")
    p.add_argument("--k", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--i", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--rule", choices=["quadratic", "affine"], default="quadratic")
    p.add_argument("--full", action="store_true", help="lift the desk-scale caps")
    p.add_argument("--out", default="results/gap")
    p.set_defaults(func=cmd_gap_study)

    p = sub.add_parser("newsvendor", help="out-of-sample CVaR newsvendor study")
    p.add_argument("--config")
    p.add_argument("--out", default="results/newsvendor")
    p.set_defaults(func=cmd_newsvendor)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except jsonschema.ValidationError as exc:
        print(f"error: instance does not match the schema: {exc.message}", file=sys.stderr)
        return 1
    except (instance_io.InstanceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
