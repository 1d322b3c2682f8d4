"""Coverage, M-sweep, bootstrap and timing experiments.

Replication ``r`` owns ``RngStream(seed, r)``; its children are used as

* ``child(0)``: the simulated dataset
* ``child(1)``: redrawn probit covariates (when enabled)
* ``child(10 + k)``: matrix estimation and reference draws for method ``k``
* ``child(100)``: bootstrap datasets (``child(100).child(b)``)

Results are collected in replication order, so reports do not depend on the
number of worker processes.
"""

from __future__ import annotations

import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core.rng import RngStream
from ..godambe import SmallSampleWarning, assemble_godambe, mc_moments
from ..grf import GrfDesign, GrfModel
from ..probit import ProbitDesign, ProbitModel
from ..stats import SuiteOptions, clr_value, fit_pair, full_lrt, test_suite
from .config import GRF_TRUTH, METHODS, ExperimentConfig

LOW_B = 100


class ExperimentAborted(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# model construction


def covariate_design(config: ExperimentConfig, stream: RngStream | None = None) -> ProbitDesign:
    d = config.design
    if stream is None:
        stream = RngStream(d.covariate_seed)
    return ProbitDesign.uniform(config.experiment.n, d.q, stream, d.n_covariates)


def build_model(config: ExperimentConfig, rep_stream: RngStream | None = None):
    if config.model.name == "grf":
        return GrfModel(GrfDesign.grid(config.design.side, config.design.d0))
    if config.design.redraw_covariates and rep_stream is not None:
        return ProbitModel(covariate_design(config, rep_stream.child(1)))
    return ProbitModel(covariate_design(config))


def perturbed_start(model, theta):
    """Truth moved by +10% of ``max(1, |phi|)`` on the internal scale."""
    phi = model.to_internal(theta)
    return model.from_internal(phi + 0.1 * np.maximum(1.0, np.abs(phi)))


_MODEL_CACHE = {}


def _model_for(config, stream):
    if config.model.name == "probit" and config.design.redraw_covariates:
        return build_model(config, stream)
    key = repr(config.model) + repr(config.design) + str(config.experiment.n)
    if key not in _MODEL_CACHE:
        _MODEL_CACHE.clear()
        _MODEL_CACHE[key] = build_model(config)
    return _MODEL_CACHE[key]


# reports


@dataclass
class CoverageReport:
    """Coverage per ``(row, statistic, method, level)``.

    ``row`` is the sample size for coverage runs and ``M`` for sweeps.
    """

    kind: str
    row_label: str
    cells: dict = field(default_factory=dict)
    failures: int = 0
    R: int = 0
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    seed: int = 0
    flags: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @staticmethod
    def _cell(hits, total, failed):
        c = hits / total if total else math.nan
        se = math.sqrt(c * (1.0 - c) / total) * 100.0 if total else math.nan
        return {"coverage": 100.0 * c if total else math.nan, "se": se, "hits": hits,
                "R_eff": total, "failures": failed}

    def coverage(self, statistic, method, level, row=None):
        return self.cells[self._key(statistic, method, level, row)]["coverage"]

    def se(self, statistic, method, level, row=None):
        return self.cells[self._key(statistic, method, level, row)]["se"]

    def _key(self, statistic, method, level, row):
        if row is None:
            rows = {k[0] for k in self.cells}
            if len(rows) != 1:
                raise KeyError("report has several rows; pass row=")
            row = rows.pop()
        return (row, statistic, method, level)

    def rows(self):
        return sorted({k[0] for k in self.cells})

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "row_label": self.row_label,
            "R": self.R,
            "failures": self.failures,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "flags": self.flags,
            "diagnostics": self.diagnostics[:50],
            "config": self.config,
            "cells": [
                {self.row_label: k[0], "statistic": k[1], "method": k[2], "level": k[3], **v}
                for k, v in sorted(self.cells.items(), key=lambda kv: tuple(map(str, kv[0])))
            ],
        }


def _aggregate(kind, row_label, records, config: ExperimentConfig, wall, flags=()):
    """Fold per-replication records into a report; check the failure budget."""
    e = config.experiment
    report = CoverageReport(kind, row_label, R=len(records), config=config.to_dict(),
                            wall_time=wall, seed=e.seed, flags=list(flags))
    tallies = {}
    for rec in records:
        if rec["failed"]:
            report.failures += 1
            report.diagnostics.append({"replication": rec["r"], "reason": rec["reason"]})
            continue
        for key, covers in rec["covers"].items():
            hit, tot, bad = tallies.get(key, (0, 0, 0))
            if covers is None:
                tallies[key] = (hit, tot, bad + 1)
            else:
                tallies[key] = (hit + int(covers), tot + 1, bad)
    for key, (hit, tot, bad) in tallies.items():
        report.cells[key] = CoverageReport._cell(hit, tot, bad + report.failures)
    if report.R and report.failures / report.R > e.max_failure_rate:
        raise ExperimentAborted(
            f"{report.failures} of {report.R} replications failed "
            f"(> {100 * e.max_failure_rate:.0f}%); first reasons: "
            + "; ".join(d["reason"] for d in report.diagnostics[:3]),
            report,
        )
    return report


def _run(fn, config: ExperimentConfig, R: int):
    e = config.experiment
    args = [(config, r) for r in range(R)]
    if e.workers <= 1 or R == 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=e.workers) as pool:
        return list(pool.map(fn, args, chunksize=max(1, R // (4 * e.workers))))


def _fail(r, exc):
    return {"r": r, "failed": True, "reason": f"{type(exc).__name__}: {exc}", "covers": {}}


def _suite_covers(suite, levels, row):
    covers = {}
    for name, res in suite.results.items():
        for lv in levels:
            covers[(row, name, suite.method, lv)] = res.covers(lv) if res.ok and math.isfinite(res.value) else None
    return covers


def _prepare(config, r):
    stream = RngStream(config.experiment.seed, r)
    model = _model_for(config, stream)
    theta = config.theta
    interest = model.index(config.interest)
    data = model.simulate(theta, config.experiment.n, stream.child(0))
    start = perturbed_start(model, theta)
    return stream, model, theta, interest, data, start


def _fits(model, data, interest, gamma0, start):
    fg, fc = fit_pair(model, data, interest, gamma0, start)
    if not (fg.converged and fc.converged):
        raise RuntimeError(f"fit did not converge ({fg.message or fc.message})")
    return fg, fc


# coverage


def _coverage_replication(args):
    config, r = args
    e = config.experiment
    try:
        stream, model, theta, interest, data, start = _prepare(config, r)
        gamma0 = theta[list(interest)]
        fits = _fits(model, data, interest, gamma0, start)
        covers = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallSampleWarning)
            for k, method in enumerate(METHODS):
                if method not in e.methods:
                    continue
                opts = SuiteOptions(levels=e.levels, statistics=e.statistics, M=e.M, h_form=e.h_form,
                                    draws=e.draws, stream=stream.child(10 + k))
                suite = test_suite(model, data, interest, gamma0, method, opts, fits=fits)
                covers.update(_suite_covers(suite, e.levels, e.n))
        if e.lrt:
            try:
                res, _, fc = full_lrt(model.design, data, interest, gamma0, start, e.levels)
                ok = fc.converged
            except Exception:  # noqa: BLE001 - counted as a statistic-level failure
                res, ok = None, False
            for lv in e.levels:
                covers[(e.n, "LRT", "full", lv)] = res.covers(lv) if ok else None
        return {"r": r, "failed": False, "reason": "", "covers": covers}
    except Exception as exc:  # noqa: BLE001
        return _fail(r, exc)


def coverage_experiment(config: ExperimentConfig) -> CoverageReport:
    """Empirical coverage of every requested statistic and matrix method."""
    t0 = time.perf_counter()
    records = _run(_coverage_replication, config, config.experiment.R)
    return _aggregate("coverage", "n", records, config, time.perf_counter() - t0)


# M sweep


def _msweep_replication(args):
    config, r = args
    e = config.experiment
    try:
        stream, model, theta, interest, data, start = _prepare(config, r)
        gamma0 = theta[list(interest)]
        fg, fc = _fits(model, data, interest, gamma0, start)
        n = model.n_units(data)
        mstream = stream.child(10 + METHODS.index("simulated"))
        at_c = mc_moments(model, fc.values, n, e.M_values, mstream.child(1), e.h_form)
        at_g = None
        if "cLR_CB" in e.statistics:
            at_g = mc_moments(model, fg.values, n, e.M_values, mstream.child(2), e.h_form)
        covers = {}
        for M in e.M_values:
            gc = assemble_godambe(*at_c[M], "simulated", {"at": "constrained", "M": M, "n": n})
            gg = None if at_g is None else assemble_godambe(*at_g[M], "simulated", {"at": "global", "M": M, "n": n})
            opts = SuiteOptions(levels=e.levels, statistics=e.statistics, M=M, draws=e.draws, stream=mstream)
            suite = test_suite(model, data, interest, gamma0, "simulated", opts, fits=(fg, fc), godambe=(gc, gg))
            covers.update(_suite_covers(suite, e.levels, M))
        return {"r": r, "failed": False, "reason": "", "covers": covers}
    except Exception as exc:  # noqa: BLE001
        return _fail(r, exc)


def m_sweep_experiment(config: ExperimentConfig, M_values=None) -> CoverageReport:
    """Simulated-matrix coverage as ``M`` grows, on shared datasets and nested MC draws."""
    if M_values is not None:
        config = config.override("experiment", M_values=tuple(int(m) for m in M_values))
    t0 = time.perf_counter()
    records = _run(_msweep_replication, config, config.experiment.R)
    return _aggregate("msweep", "M", records, config, time.perf_counter() - t0)


# bootstrap


def _bootstrap_replication(args):
    config, r = args
    e = config.experiment
    try:
        stream, model, theta, interest, data, start = _prepare(config, r)
        gamma0 = theta[list(interest)]
        fg, fc = _fits(model, data, interest, gamma0, start)
        observed = clr_value(fg, fc)
        boot_theta = fc.values
        boot_start = perturbed_start(model, boot_theta)
        bstream = stream.child(100)
        draws, bad = [], 0
        for b in range(e.B):
            y = model.simulate(boot_theta, e.n, bstream.child(b))
            try:
                g, c = _fits(model, y, interest, gamma0, boot_start)
                draws.append(clr_value(g, c))
            except Exception:  # noqa: BLE001 - failed bootstrap fits are counted, not used
                bad += 1
        if len(draws) < max(2, e.B // 2):
            raise RuntimeError(f"{bad} of {e.B} bootstrap fits failed")
        draws = np.asarray(draws)
        covers = {(e.n, "cLR", "bootstrap", lv): bool(observed <= np.quantile(draws, lv)) for lv in e.levels}
        return {"r": r, "failed": False, "reason": "", "covers": covers, "boot_failures": bad}
    except Exception as exc:  # noqa: BLE001
        return _fail(r, exc)


def bootstrap_clr_experiment(config: ExperimentConfig, B=None) -> CoverageReport:
    """Coverage of the unadjusted ratio statistic against its parametric bootstrap law."""
    if B is not None:
        config = config.override("experiment", B=int(B))
    flags = []
    if config.experiment.B < LOW_B:
        flags.append(f"low-B: only {config.experiment.B} bootstrap draws (< {LOW_B})")
    t0 = time.perf_counter()
    records = _run(_bootstrap_replication, config, config.experiment.R)
    report = _aggregate("bootstrap", "n", records, config, time.perf_counter() - t0, flags)
    report.diagnostics.append({"bootstrap_fit_failures": int(sum(rec.get("boot_failures", 0) for rec in records))})
    return report


# timing


def machine_metadata() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "numpy": np.__version__,
    }


def _best_time(fn, repeats):
    best, out = math.inf, None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def timing_experiment(sides=(4, 6, 8), M=1000, *, d0=None, theta=None, seed=0, repeats=3) -> dict:
    """Wall time of the analytic variability matrix against its Monte Carlo estimate.

    ``d0=None`` weights every pair, so the analytic cost grows like ``q**4``.
    """
    from ..godambe import mc_J

    theta = np.asarray(GRF_TRUTH if theta is None else theta, dtype=float)
    rows = []
    for side in sides:
        model = GrfModel(GrfDesign.grid(int(side), d0))
        t_an, j_an = _best_time(lambda: model.analytic_J(theta, 1), repeats)
        t_mc, j_mc = _best_time(lambda: mc_J(model, theta, M, RngStream(seed, int(side)), n=1), repeats)
        rows.append({
            "side": int(side),
            "q": int(side) ** 2,
            "pairs": model.design.n_pairs,
            "analytic_s": t_an,
            "mc_s": t_mc,
            "rel_frobenius": float(np.linalg.norm(j_mc - j_an) / np.linalg.norm(j_an)),
        })
    for prev, cur in zip(rows, rows[1:]):
        cur["analytic_ratio"] = cur["analytic_s"] / prev["analytic_s"]
        cur["mc_ratio"] = cur["mc_s"] / prev["mc_s"]
    return {"M": int(M), "d0": d0, "rows": rows, "machine": machine_metadata()}
