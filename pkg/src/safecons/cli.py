"""Command-line entry point: ``safecons <command> --config FILE``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DivergenceError, InvariantViolation, NumericalError,
                     RegulatorInfeasible, SafeconsError)
from .plant import check_transmission_zeros, solve_regulator
from .safety import safety_report
from .scenario import config_hash, load_scenario
from .simulator import centralized_oracle, convergence_metrics, integrate_closed_loop, synthesize_all

log = logging.getLogger("safecons")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSAFE = 2
EXIT_DIVERGED = 3
EXIT_REGULATOR = 4
EXIT_ORACLE = 5
EXIT_UNCERTIFIED = 6

PLOT_POINTS = 500


def _fmt(v):
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(data):
    json.dump(_jsonable(data), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def write_trace_csv(path, trace, config):
    N, p = config.N, config.p
    nmax = max((x.shape[1] for x in trace.x), default=0)
    mmax = max((u.shape[1] for u in trace.u), default=0)
    header = (["t", "agent"] + [f"x{j + 1}" for j in range(nmax)]
              + [f"y{j + 1}" for j in range(p)] + [f"z{j + 1}" for j in range(p)]
              + [f"eta{j + 1}" for j in range(p)] + [f"s{j + 1}" for j in range(p)]
              + [f"u{j + 1}" for j in range(mmax)] + ["h", "margin_omega", "margin_ball", "gap"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(trace.times):
            for i in range(N):
                row = [_fmt(t), str(i + 1)]
                x = trace.x[i][k] if trace.x else np.empty(0)
                u = trace.u[i][k] if trace.u else np.empty(0)
                row += [_fmt(v) for v in x] + [""] * (nmax - x.size)
                for arr in (trace.y, trace.z, trace.eta, trace.s):
                    row += [_fmt(v) for v in arr[k, i]]
                row += [_fmt(v) for v in u] + [""] * (mmax - u.size)
                row += [_fmt(trace.h[k]), _fmt(trace.margin_omega[k, i]),
                        _fmt(trace.margin_ball[k, i]), _fmt(trace.gap[k, i])]
                w.writerow(row)


def plot_data(trace, points=PLOT_POINTS):
    idx = np.unique(np.linspace(0, len(trace.times) - 1, min(points, len(trace.times))).astype(int))
    return {
        "t": trace.times[idx],
        "y": trace.y[idx].transpose(1, 0, 2),
        "s": trace.s[idx].transpose(1, 0, 2),
        "gap": trace.gap[idx].T,
        "h": trace.h[idx],
        "r": trace.r[idx],
        "y_star": trace.y_star,
    }


def run_simulation(config_path, out_dir, step=None, horizon=None, strict=False):
    """Run one scenario end to end and write its artifacts; returns an exit code."""
    config, raw = load_scenario(config_path, step=step, horizon=horizon)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(raw)
    syntheses = None
    feas = None
    if config.mode == "closed_loop":
        syntheses = synthesize_all(config)
        from .analysis import scenario_feasibility
        feas = scenario_feasibility(config, syntheses)
        _write_json(out / "feasibility.json", feas.to_dict())
        log.info("certified=%s", feas.certified)
    trace = integrate_closed_loop(config, syntheses)
    rep = safety_report(trace, syntheses)
    summary = convergence_metrics(trace)
    summary.update(rep.summary())
    summary["certified"] = None if feas is None else feas.certified
    summary["config_hash"] = digest
    summary["scenario"] = config.name
    summary["y_star"] = trace.y_star
    summary["step"] = config.step
    summary["horizon"] = config.horizon
    write_trace_csv(out / "trace.csv", trace, config)
    _write_json(out / "summary.json", summary)
    _write_json(out / "plotdata.json", plot_data(trace))
    if rep.first_violation_t is not None:
        print(f"safety violation: output left the safe region at t={rep.first_violation_t:.17g}",
              file=sys.stderr)
        return EXIT_UNSAFE
    if strict and feas is not None and not feas.certified:
        failed = ", ".join(it.name for it in feas.items if not it.passed)
        print(f"parameters not certified; failing conditions: {failed}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


def _batch_worker(args):
    path, out_dir, step, horizon, strict = args
    try:
        return path, _guard(lambda: run_simulation(path, out_dir, step, horizon, strict))
    except Exception as exc:  # pragma: no cover - reported to the parent
        return path, f"error: {exc}"


def _guard(fn):
    try:
        return fn()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged at t={exc.t:.17g}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RegulatorInfeasible, InvariantViolation) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_REGULATOR if isinstance(exc, RegulatorInfeasible) else EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE


def cmd_simulate(args):
    if args.batch:
        paths = sorted(str(p) for p in Path(args.batch).glob("*.json"))
        if not paths:
            print(f"no scenarios in {args.batch}", file=sys.stderr)
            return EXIT_CONFIG
        out = Path(args.out or "runs")
        jobs = [(p, str(out / Path(p).stem), args.step, args.horizon, args.strict_certify)
                for p in paths]
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as ex:
            results = list(ex.map(_batch_worker, jobs))
        codes = {}
        for path, code in results:
            codes[Path(path).name] = code
        _emit(codes)
        worst = [c for c in codes.values() if isinstance(c, int) and c != 0]
        return max(worst) if worst else (EXIT_OK if all(isinstance(c, int) for c in codes.values())
                                          else EXIT_CONFIG)
    if not args.config:
        print("simulate needs --config or --batch", file=sys.stderr)
        return EXIT_CONFIG
    return run_simulation(args.config, args.out or "run", args.step, args.horizon,
                          args.strict_certify)


def cmd_check_params(args):
    config, _ = load_scenario(args.config)
    from .analysis import scenario_feasibility
    feas = scenario_feasibility(config, synthesize_all(config))
    _emit(feas.to_dict())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "feasibility.json", feas.to_dict())
    if args.strict_certify and not feas.certified:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_solve_regulator(args):
    config, _ = load_scenario(args.config)
    out = []
    for i, agent in enumerate(config.agents):
        if not check_transmission_zeros(agent):
            print(f"agent {i + 1}: rank [[A, B], [C, 0]] < n + p; regulator equations unsolvable",
                  file=sys.stderr)
            return EXIT_REGULATOR
        Pi, Psi = solve_regulator(agent)
        out.append({
            "agent": i + 1, "Pi": Pi, "Psi": Psi,
            "residual_A_Pi_B_Psi": float(np.linalg.norm(agent.A @ Pi + agent.B @ Psi, 2)),
            "residual_C_Pi_I": float(np.linalg.norm(agent.C @ Pi - np.eye(agent.p), 2)),
        })
    _emit({"agents": out})
    return EXIT_OK


def cmd_oracle(args):
    config, _ = load_scenario(args.config)
    res = centralized_oracle(config.objectives, config.region)
    _emit({"y_star": res.y, "residual": res.residual, "value": res.value,
           "iterations": res.iterations})
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="safecons",
                                 description="Safe distributed optimal output consensus")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--strict-certify", action="store_true",
                       help="exit 6 when the gain conditions are not all satisfied")

    p = sub.add_parser("simulate", help="integrate a scenario and write artifacts")
    common(p, config_required=False)
    p.add_argument("--step", type=float, help="override the integration step")
    p.add_argument("--horizon", type=float, help="override the horizon")
    p.add_argument("--batch", help="run every *.json in this directory concurrently")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-params", help="evaluate the gain conditions only")
    common(p)
    p.set_defaults(func=cmd_check_params)

    p = sub.add_parser("solve-regulator", help="print Pi, Psi and residuals per agent")
    common(p)
    p.set_defaults(func=cmd_solve_regulator)

    p = sub.add_parser("oracle", help="centralised constrained optimum")
    common(p)
    p.set_defaults(func=cmd_oracle)
    return ap


def _configure_logging():
    level = os.environ.get("SCL_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    code = _guard(lambda: args.func(args))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
