"""Command line entry point: ``areafl run | sweep | verify | report constants``."""

from __future__ import annotations

import argparse
import json
import math
import sys

from .core import ConfigurationError


def _print_summary(reports) -> None:
    print(f"{'method':<10} {'alpha':>10} {'rho':>8} {'acc_mean':>9} {'loss_mean':>12} diverged")
    for r in reports:
        agg = r.aggregate()
        alpha = "-" if r.alpha is None else f"{r.alpha:g}"
        rho = ">1" if math.isinf(r.rho) else f"{r.rho:.3f}"
        print(f"{r.method:<10} {alpha:>10} {rho:>8} {agg['acc_mean']:>9.4f} {agg['loss_mean']:>12.4g} "
              f"{sum(r.diverged)}/{len(r.diverged)}")


def cmd_run(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    report = run_experiment(cfg, args.out, workers=args.workers)
    _print_summary([report])
    return 0


def cmd_sweep(args) -> int:
    from .experiment import ExperimentConfig, run_sweep

    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    _print_summary(run_sweep(cfg, args.grid, args.out, workers=args.workers))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    rows = run_suite(args.suite)
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']:<{width}}  {r['value']:.3e}")
    payload = json.dumps(rows, indent=2)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0 if all(r["passed"] for r in rows) else 1


def cmd_report(args) -> int:
    from .experiment import ExperimentConfig, report_constants

    consts = report_constants(ExperimentConfig.from_file(args.config))
    for key in ("gamma", "D", "p_min", "q_bar", "lambda_s_opt"):
        print(f"{key:<13} {consts[key]:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="areafl", description="Asynchronous federated exact-averaging simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every trial of a config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="directory for metrics.csv, summary.csv, report.json and event logs")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a config over a parameter grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--grid", required=True, help="e.g. alpha=1e-2:1e4:log7 or client.M=1,5,50")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", help="run the built-in verification checks")
    ver.add_argument("--suite", default="all", choices=["all", "invariants", "rates", "oracle"])
    ver.add_argument("--json", help="write the results here instead of printing them")
    ver.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="print derived quantities")
    rep_sub = rep.add_subparsers(dest="what", required=True)
    const = rep_sub.add_parser("constants", help="step-size constants of a config")
    const.add_argument("--config", required=True)
    const.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
