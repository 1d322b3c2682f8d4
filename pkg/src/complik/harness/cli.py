"""Command line entry point.

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from ..core.linalg import NotPositiveDefiniteError
from ..core.params import PartitionedParams
from ..core.rng import RngStream
from ..fit import constrained_mcle, mcle
from ..godambe import estimate_godambe
from ..grf import GrfDesign, GrfModel
from ..probit import ProbitDesign, ProbitModel
from ..stats import InconsistentFitError, SuiteOptions, test_suite
from . import io
from .config import ConfigError, ExperimentConfig
from .experiments import (
    ExperimentAborted,
    bootstrap_clr_experiment,
    coverage_experiment,
    m_sweep_experiment,
    timing_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (ArithmeticError, np.linalg.LinAlgError, NotPositiveDefiniteError,
                  InconsistentFitError, ExperimentAborted)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


# data-driven commands


def _load_model(args):
    data = io.read_data_csv(args.data)
    if args.model == "grf":
        if args.locations:
            design = GrfDesign(io.read_data_csv(args.locations), d0=args.d0)
        else:
            side = args.side or math.isqrt(data.shape[1])
            if side * side != data.shape[1]:
                raise UsageError(f"{data.shape[1]} columns is not a square grid; pass --locations")
            design = GrfDesign.grid(side, args.d0)
        if design.q != data.shape[1]:
            raise UsageError(f"design has {design.q} locations but data has {data.shape[1]} columns")
        return GrfModel(design), data
    if not args.covariates:
        raise UsageError("probit needs --covariates")
    design = ProbitDesign(io.read_covariates_csv(args.covariates))
    if data.shape != (design.n, design.q):
        raise UsageError(f"data shape {data.shape} does not match covariates {(design.n, design.q)}")
    return ProbitModel(design), data.astype(np.int8)


def _interest(model, args):
    names = [s.strip() for s in args.interest.split(",")] if args.interest else [model.param_names[-1]]
    return model.index(names)


def _init(model, data, args):
    if args.init:
        return model.check_params(_floats(args.init))
    return model.default_init(data)


def cmd_fit(args):
    model, data = _load_model(args)
    idx = _interest(model, args)
    start = PartitionedParams(_init(model, data, args), idx, model.param_names)
    out = {"global": mcle(model, data, start).to_dict()}
    if args.gamma0:
        out["constrained"] = constrained_mcle(model, data, _floats(args.gamma0), start).to_dict()
    return out


def cmd_test(args):
    model, data = _load_model(args)
    idx = _interest(model, args)
    if not args.gamma0:
        raise UsageError("test needs --gamma0")
    opts = SuiteOptions(M=args.M or 1000, init=_init(model, data, args), stream=RngStream(args.seed or 0),
                        weights_at=args.weights_at)
    suite = test_suite(model, data, idx, _floats(args.gamma0), args.method, opts)
    return suite.to_dict()


def cmd_matrices(args):
    model, data = _load_model(args)
    theta = _floats(args.theta) if args.theta else mcle(model, data, _init(model, data, args)).values
    est = estimate_godambe(model, theta, data, args.method, M=args.M or 1000,
                           stream=RngStream(args.seed or 0))
    return est.to_dict()


# experiments


def _config(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    cfg = cfg.override("experiment", R=args.R, M=args.M, seed=args.seed, workers=args.workers)
    if args.out:
        cfg = cfg.override("output", dir=args.out)
    return cfg


def _write_report(cfg, name, report, extra=None):
    out = Path(cfg.output.dir)
    stem = (cfg.output.prefix or name)
    csv_path = io.write_csv(out / f"{stem}.csv", io.coverage_table(report))
    payload = {"report": report.to_dict(), "meta": io.run_metadata(), **(extra or {})}
    json_path = io.write_json(out / f"{stem}.json", payload)
    return {"csv": str(csv_path), "json": str(json_path), "R": report.R, "failures": report.failures,
            "flags": report.flags}


def cmd_coverage(args):
    cfg = _config(args)
    return _write_report(cfg, "coverage", coverage_experiment(cfg))


def cmd_msweep(args):
    cfg = _config(args)
    if args.M_values:
        cfg = cfg.override("experiment", M_values=tuple(_ints(args.M_values)))
    return _write_report(cfg, "msweep", m_sweep_experiment(cfg))


def cmd_bootstrap(args):
    cfg = _config(args)
    if args.B:
        cfg = cfg.override("experiment", B=args.B)
    return _write_report(cfg, "bootstrap", bootstrap_clr_experiment(cfg))


def cmd_timing(args):
    cfg = _config(args)
    e = cfg.experiment
    sides = _ints(args.sides) if args.sides else e.sides
    res = timing_experiment(sides, args.M or e.M, d0=e.timing_d0, seed=e.seed, repeats=e.timing_repeats)
    out = Path(cfg.output.dir)
    stem = cfg.output.prefix or "timing"
    io.write_csv(out / f"{stem}.csv", io.timing_table(res))
    io.write_json(out / f"{stem}.json", {"timing": res, "meta": io.run_metadata()})
    return {"csv": str(out / f"{stem}.csv"), "json": str(out / f"{stem}.json"), "rows": res["rows"]}


def build_parser():
    p = _Parser(prog="complik", description="Composite likelihood tests and coverage experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--model", choices=("grf", "probit"), required=True)
        sp.add_argument("--data", required=True, help="CSV, one row per unit")
        sp.add_argument("--covariates", help="probit covariates CSV with i, j, x0.. columns")
        sp.add_argument("--locations", help="GRF site coordinates CSV (x, y per row)")
        sp.add_argument("--side", type=int, help="GRF grid side (default sqrt(q))")
        sp.add_argument("--d0", type=float, default=3.0, help="GRF pair distance threshold")
        sp.add_argument("--interest", help="comma-separated interest parameter names")
        sp.add_argument("--gamma0", help="comma-separated hypothesised interest values")
        sp.add_argument("--init", help="comma-separated starting values")
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--M", type=int)

    sp = sub.add_parser("fit", help="global (and constrained) composite likelihood fit")
    data_args(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("test", help="all seven statistics for one hypothesis")
    data_args(sp)
    sp.add_argument("--method", choices=("analytic", "empirical", "simulated"), default="simulated")
    sp.add_argument("--weights-at", choices=("constrained", "global"), default="constrained")
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("matrices", help="sensitivity, variability and Godambe inverse")
    data_args(sp)
    sp.add_argument("--method", choices=("analytic", "empirical", "simulated"), default="simulated")
    sp.add_argument("--theta", help="evaluation point (default: the global fit)")
    sp.set_defaults(func=cmd_matrices)

    def exp_args(sp):
        sp.add_argument("--config", help="experiment JSON")
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--R", type=int)
        sp.add_argument("--M", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory")

    for name, func, helptext in (
        ("coverage", cmd_coverage, "coverage study"),
        ("msweep", cmd_msweep, "simulated-matrix coverage across M"),
        ("bootstrap", cmd_bootstrap, "bootstrap calibration of the unadjusted statistic"),
        ("timing", cmd_timing, "analytic vs Monte Carlo variability timing"),
    ):
        sp = sub.add_parser(name, help=helptext)
        exp_args(sp)
        sp.set_defaults(func=func)
        if name == "msweep":
            sp.add_argument("--M-values", dest="M_values", help="comma-separated M list")
        if name == "bootstrap":
            sp.add_argument("--B", type=int)
        if name == "timing":
            sp.add_argument("--sides", help="comma-separated grid sides")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"complik {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"complik {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"complik {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = {"command": args.command, "wall_time": time.perf_counter() - t0, **result}
    print(io.dumps_json(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
