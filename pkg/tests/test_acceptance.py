"""Exit criteria, each checked at its stated tolerance.

Criteria 1-3 run full coverage studies (about an hour on one core in total);
criterion 9 additionally needs ``--run-bootstrap``. Set ``COMPLIK_WORKERS``
to parallelise the replications.
"""

import math
import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from complik import godambe, probit
from complik.core import RngStream, bvn_cdf, chisq_quantile, weighted_chisq_quantile
from complik.core.model import Reparameterized
from complik.grf import GrfDesign, GrfModel
from complik.harness.config import ExperimentConfig
from complik.harness.experiments import (
    bootstrap_clr_experiment,
    coverage_experiment,
    m_sweep_experiment,
    timing_experiment,
)
from complik.probit import ProbitDesign, ProbitModel
from complik.stats import SuiteOptions, test_suite as run_suite

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
WORKERS = int(os.environ.get("COMPLIK_WORKERS", "1"))
THETA = np.array([0.0, 2.0, 0.7, 1.0])


def load(name, **experiment):
    cfg = ExperimentConfig.load(CONFIGS / name)
    return cfg.override("experiment", workers=WORKERS, **experiment)


def within(value, target, tol):
    return abs(value - target) <= tol + 1e-9


def fmt(value, target, tol):
    return f"{value:.1f} (target {target} +/- {tol})"


# criteria 1-3: coverage studies


def test_criterion_1_grf_coverage(verdict):
    rep = coverage_experiment(load("grf_table1.json", statistics=("cLR_I",)))
    c95 = rep.coverage("cLR_I", "analytic", 0.95)
    c99 = rep.coverage("cLR_I", "analytic", 0.99)
    lrt = rep.coverage("LRT", "full", 0.95)
    ok = within(c95, 95.1, 1.5) and within(c99, 99.1, 0.8) and within(lrt, 94.8, 1.5)
    verdict(1, ok, f"cLR_I95 {fmt(c95, 95.1, 1.5)}, cLR_I99 {fmt(c99, 99.1, 0.8)}, "
                   f"LRT95 {fmt(lrt, 94.8, 1.5)}, failures {rep.failures}/{rep.R}")
    assert ok


def test_criterion_2_m_sweep(verdict):
    rep = m_sweep_experiment(load("grf_table2.json", statistics=("cLR_I",)))
    targets = {100: 96.4, 250: 96.7, 500: 96.9}
    cov = {M: rep.coverage("cLR_I", "simulated", 0.95, row=M) for M in targets}
    se = {M: rep.se("cLR_I", "simulated", 0.95, row=M) for M in targets}
    rows_ok = all(within(cov[M], t, 1.5) for M, t in targets.items())
    gap = abs(cov[250] - cov[500])
    stable = gap <= 2 * math.hypot(se[250], se[500])
    detail = ", ".join(f"M={M} {fmt(cov[M], t, 1.5)}" for M, t in targets.items())
    verdict(2, rows_ok and stable, f"{detail}; |250-500| = {gap:.2f} <= {2 * math.hypot(se[250], se[500]):.2f}")
    assert rows_ok and stable


def test_criterion_3_probit_coverage(verdict):
    rep = coverage_experiment(load("probit_table4.json", statistics=("cLR2", "cLR_I")))
    sim = rep.coverage("cLR_I", "simulated", 0.95)
    emp = rep.coverage("cLR2", "empirical", 0.95)
    ok = within(sim, 95.0, 1.5) and within(emp, 97.0, 1.5)
    verdict(3, ok, f"cLR_I simulated {fmt(sim, 95.0, 1.5)}, cLR2 empirical {fmt(emp, 97.0, 1.5)}, "
                   f"failures {rep.failures}/{rep.R}")
    assert ok


# criteria 4-8, 10: algebra, numerics and primitives


def test_criterion_4_scalar_identity(verdict):
    rng = np.random.default_rng(4004)
    model = GrfModel(GrfDesign.grid(3, None))
    worst, done = 0.0, 0
    for k in range(100):
        theta = np.array([rng.normal(), rng.uniform(0.5, 3), rng.uniform(0.4, 1.5), rng.uniform(0.5, 1.9)])
        y = model.simulate(theta, int(rng.integers(10, 40)), RngStream(4004, k))
        res = run_suite(model, y, (2,), [theta[2]], "analytic",
                        SuiteOptions(init=theta, statistics=("cS", "cLR1", "cLR2", "cLR_I")))
        vals = [res[s].value for s in ("cLR1", "cLR2", "cLR_I")]
        assert all(res[s].ok for s in ("cLR1", "cLR2", "cLR_I"))
        scale = max(1.0, abs(vals[0]))
        worst = max(worst, (max(vals) - min(vals)) / scale)
        done += 1
    ok = done == 100 and worst <= 1e-8
    verdict(4, ok, f"{done} instances, max |difference| / max(1, value) = {worst:.2e}")
    assert ok


def test_criterion_5_invariance(verdict):
    model = GrfModel(GrfDesign.grid(4, 3.0))
    y = model.simulate(THETA, 30, RngStream(5005))
    gamma0 = [0.6, 1.1]
    base = run_suite(model, y, (2, 3), gamma0, "analytic", SuiteOptions(init=THETA))
    worst, cw_change = 0.0, {}
    for logs in (("sigma2",), ("lambda",), ("sigma2", "lambda")):
        rep = Reparameterized(model, logs)
        g0 = [math.log(gamma0[0]) if "lambda" in logs else gamma0[0], gamma0[1]]
        other = run_suite(rep, y, (2, 3), g0, "analytic", SuiteOptions(init=rep.from_base(THETA)))
        for s in ("cLR", "cLR1", "cLR2", "cLR_I"):
            worst = max(worst, abs(other[s].value - base[s].value) / max(abs(base[s].value), 1e-300))
        cw_change[logs] = abs(other["cW"].value - base["cW"].value)
    ok = worst <= 1e-6 and cw_change[("lambda",)] > 1e-3
    verdict(5, ok, f"max relative change {worst:.2e}; cW change under log lambda {cw_change[('lambda',)]:.3g}")
    assert ok


def _unit_hessians(model, theta, y):
    """Per-unit Hessians from central differences of the unit scores."""
    h = 1e-5 * np.maximum(1.0, np.abs(theta))
    cols = []
    for a in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[a] += h[a]
        dn[a] -= h[a]
        cols.append((model.unit_scores(up, y) - model.unit_scores(dn, y)) / (2 * h[a]))
    hess = np.stack(cols, axis=-1)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def test_criterion_6_matrix_routes(verdict):
    model = GrfModel(GrfDesign.grid(4, 3.0))
    H_an, J_an = model.analytic_H(THETA, 1), model.analytic_J(THETA, 1)
    M = 20_000
    H_mc, J_mc = godambe.mc_moments(model, THETA, 1, [M], RngStream(6006))[M]
    rel_J = np.linalg.norm(J_mc - J_an) / np.linalg.norm(J_an)
    rel_H = np.linalg.norm(H_mc - H_an) / np.linalg.norm(H_an)

    n = 5000
    y = model.simulate(THETA, n, RngStream(6007))
    u = model.unit_scores(THETA, y)
    comp = model.component_scores(THETA, y)
    per_unit = {
        "J": u[:, :, None] * u[:, None, :],
        "H_bartlett": np.einsum("nka,nkb->nab", comp, comp),
        "H_hessian": -_unit_hessians(model, THETA, y),
    }
    estimates = {
        "J": godambe.empirical_J(model, THETA, y),
        "H_bartlett": godambe.empirical_H_bartlett(model, THETA, y),
        "H_hessian": godambe.empirical_H_hessian(model, THETA, y),
    }
    worst = 0.0
    for key, sample in per_unit.items():
        target = J_an if key == "J" else H_an
        se = sample.std(axis=0, ddof=1) / math.sqrt(n)
        # entries that do not vary across units (the mean-mean Hessian) only carry rounding noise
        se = np.maximum(se, 1e-7 * np.maximum(1.0, np.abs(target)))
        z = np.abs(estimates[key] - target) / se
        worst = max(worst, float(z.max()))
    ok = rel_J <= 0.05 and rel_H <= 0.05 and worst <= 4.0
    verdict(6, ok, f"simulated rel. Frobenius J {rel_J:.4f}, H {rel_H:.4f}; "
                   f"empirical max |z| {worst:.2f} (<= 4)")
    assert ok


def _central_fd(f, x, rel=1e-4):
    g = np.empty_like(x)
    for a in range(x.size):
        h = rel * max(1.0, abs(x[a]))
        e = np.zeros_like(x)
        e[a] = h
        g[a] = (8 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12 * h)
    return g


def _richardson(f, x, a, h=1e-2, levels=5):
    table = []
    for i in range(levels):
        hi = h / 2**i
        e = np.zeros_like(x)
        e[a] = hi
        row = [(f(x + e) - f(x - e)) / (2 * hi)]
        for j in range(1, i + 1):
            row.append(row[j - 1] + (row[j - 1] - table[i - 1][j - 1]) / (4**j - 1))
        table.append(row)
    return table[-1][-1]


def test_criterion_7_gradients(verdict):
    rng = np.random.default_rng(7007)
    model = GrfModel(GrfDesign.grid(4, 3.0))
    grf_worst = 0.0
    for k in range(50):
        theta = np.array([rng.normal(), rng.uniform(0.5, 3), rng.uniform(0.3, 2), rng.uniform(0.4, 1.9)])
        y = model.simulate(theta, 5, RngStream(7007, k))
        g = model.score(theta, y)
        fd = _central_fd(lambda t: model.loglik(t, y), theta)
        grf_worst = max(grf_worst, np.linalg.norm(g - fd) / np.linalg.norm(g))

    pm = ProbitModel(ProbitDesign.uniform(6, 5, RngStream(7008)))
    y = pm.simulate([0.5, 1.0, 0.5], 6, RngStream(7009))
    digits = np.inf
    for _ in range(10):
        theta = np.array([rng.uniform(-1, 1), rng.uniform(-1, 2), rng.uniform(0.1, 0.8)])
        g = pm.score(theta, y)
        for a in range(3):
            ref = _richardson(lambda t: pm.loglik(t, y), theta, a)
            err = abs(g[a] - ref) / max(abs(ref), 1e-3 * np.abs(g).max())
            digits = min(digits, -math.log10(max(err, 1e-17)))
    ok = grf_worst <= 1e-6 and digits >= 6
    verdict(7, ok, f"GRF max rel err {grf_worst:.2e} (50 instances); probit min matching digits {digits:.1f}")
    assert ok


def test_criterion_8_complexity(verdict):
    res = timing_experiment((4, 6, 8), M=1000, seed=8008, repeats=3)
    steps = res["rows"][1:]
    ok = all(r["analytic_ratio"] > r["mc_ratio"] for r in steps)
    detail = "; ".join(f"side {r['side']}: analytic x{r['analytic_ratio']:.2f} vs mc x{r['mc_ratio']:.2f}"
                       for r in steps)
    verdict(8, ok, detail)
    assert ok


def test_criterion_10_primitives(verdict):
    third = abs(bvn_cdf(0.0, 0.0, 0.5) - 1 / 3)
    rng = np.random.default_rng(1010)
    l1, l2 = rng.uniform(-4, 4, 1000), rng.uniform(-4, 4, 1000)
    r = rng.uniform(0.0, 0.999, 1000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", probit.CellUnderflowWarning)
        cells = sum(np.exp(probit.pair_logprob(l1, l2, r, a, b)) for a in (0, 1) for b in (0, 1))
    cell_err = float(np.max(np.abs(cells - 1)))
    draws = 100_000
    q = weighted_chisq_quantile([1.0], 0.95, RngStream(1011), draws=draws)
    exact = chisq_quantile(0.95, 1)
    # standard error of a sample quantile: sqrt(p(1-p)/N) / density at the quantile
    dens = math.exp(-exact / 2) / math.sqrt(2 * math.pi * exact)
    se = math.sqrt(0.95 * 0.05 / draws) / dens
    ok = third <= 1e-10 and cell_err <= 1e-12 and abs(q - exact) <= 3 * se
    verdict(10, ok, f"|bvn - 1/3| {third:.1e}; max |cell sum - 1| {cell_err:.1e}; "
                    f"weighted quantile {q:.4f} vs {exact:.4f} (3 SE = {3 * se:.4f})")
    assert ok


# criterion 9: slow


@pytest.mark.slow
def test_criterion_9_bootstrap(verdict):
    rep = bootstrap_clr_experiment(load("grf_bootstrap.json"))
    c95 = rep.coverage("cLR", "bootstrap", 0.95)
    ok = within(c95, 94.2, 3.5)
    verdict(9, ok, f"bootstrap cLR95 {fmt(c95, 94.2, 3.5)}, failures {rep.failures}/{rep.R}")
    assert ok
