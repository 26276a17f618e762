"""Command-line entry point: ``gdl plan | rate | verify-all | lower-bound-lab | plot``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiments as ex
from . import minimax_lab as ml
from .verify import SUITES, verify_all


def _dump(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def cmd_plan(args) -> int:
    plan = ex.plan_architecture(args.n, args.beta, args.d, args.h_star, args.h_g, args.lam)
    _dump(plan.to_dict(), args.out)
    return 0


def cmd_rate(args) -> int:
    config = ex.experiment_config_from(ex.load_config(args.config))
    csv_path = args.out or config.output_csv or "rate_records.csv"
    records = ex.run_rate_experiment(config, args.workers)
    ex.write_records_csv(records, csv_path, include_timing=args.timing)
    summary = {"csv": str(csv_path), "cells": len(records), "failures": sum(bool(r.error) for r in records)}
    if len(set(r.n for r in records)) >= 3:
        fit = ex.fit_rate_slope(records, config.beta, config.d)
        summary.update(slope=fit.slope, intercept=fit.intercept, r2=fit.r2, target=fit.target,
                       spearman=fit.spearman, medians={str(k): v for k, v in fit.medians.items()})
    print(json.dumps(summary, sort_keys=True, default=_jsonable))
    return 0


def cmd_verify_all(args) -> int:
    report = verify_all(args.seed, args.suite or None)
    if args.out:
        with Path(args.out).open("w") as fh:
            for name, result in report["suites"].items():
                fh.write(json.dumps({"suite": name, "seed": args.seed, **result}, sort_keys=True,
                                    default=_jsonable) + "\n")
    for name, result in report["suites"].items():
        print(f"{name:14s} {'PASS' if result['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_lower_bound_lab(args) -> int:
    values = ex.load_config(args.config) if args.config else {}
    beta = float(values.pop("beta", 3.0))
    d = int(values.pop("d", 1))
    lam = float(values.pop("lambda", 1.5))
    fisher = values.pop("fisher", "leading")
    ns = [int(t) for t in values.pop("n_ladder", " ".join(str(2 ** k) for k in range(8, 17))).replace(",", " ").split()]
    out = values.pop("output", None)
    if values:
        raise ValueError(f"unknown config keys: {sorted(values)}")
    pts = ml.lower_bound_curve(ns, beta, d, lam, fisher)
    rows = [{"n": p.n, "h": p.h, "M_eff": p.M_eff, "fisher_total": p.fisher_total, "prior_energy": p.prior_energy,
             "van_trees": p.van_trees, "density_bound": p.density_bound} for p in pts]
    slope = ml.loglog_slope(ns, [p.density_bound for p in pts])
    if out:
        with Path(out).open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(json.dumps({"slope": slope, "target": -2 * beta / (2 * beta + d), "points": len(rows)}, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    records = ex.read_records_csv(args.inp)
    csv_path, svg_path = ex.emit_plot_data(records, args.out, args.beta, args.d)
    print(f"{csv_path}\n{svg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdl", description="GAN density estimation with ReQU networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="architecture sizes for a sample size")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--h-star", type=float, required=True)
    p.add_argument("--h-g", type=float, default=None)
    p.add_argument("--lam", type=float, default=1.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("rate", help="run the rate experiment from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="CSV path (overrides output_csv)")
    p.add_argument("--workers", type=int, default=None, help="defaults to GDL_WORKERS or 1")
    p.add_argument("--timing", action="store_true", help="include wall_seconds in the CSV")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("verify-all", help="run every property suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", action="append", choices=sorted(SUITES), help="restrict to a suite (repeatable)")
    p.add_argument("--out", default=None, help="JSONL report path")
    p.set_defaults(func=cmd_verify_all)

    p = sub.add_parser("lower-bound-lab", help="assemble the minimax lower-bound curve")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_lower_bound_lab)

    p = sub.add_parser("plot", help="median/quartile CSV and SVG chart from rate records")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--d", type=int, default=1)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
