"""Wald, score and likelihood-ratio type statistics for composite likelihoods.

Block conventions: ``H^{gg}`` and ``G^{gg}`` are interest blocks of the
*inverses* ``H^{-1}`` and ``G^{-1} = H^{-1} J H^{-1}``; ``H_{gg}`` is the
interest block of ``H`` itself. All matrices are on the total scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core.distributions import chisq_quantile, chisq_sf
from .core.linalg import pencil_eigvals, sym_inverse
from .core.model import CompositeModel
from .core.params import PartitionedParams
from .core.rng import RngStream, as_generator
from .fit import FitResult, constrained_mcle, mcle
from .godambe import DEFAULT_M, GodambeEstimate, estimate_godambe

STATISTICS = ("cW", "cS", "cLR", "cLR1", "cLR2", "cLR_CB", "cLR_I")
DEFAULT_LEVELS = (0.95, 0.99)
DEFAULT_DRAWS = 100_000
CLR_TOL = 1e-8


class InconsistentFitError(ArithmeticError):
    """Constrained and global fits contradict each other."""


@dataclass(frozen=True)
class TestResult:
    name: str
    value: float
    ref_dist: str
    pvalue: float
    critical: dict = field(default_factory=dict)
    weights: np.ndarray | None = None
    nu: float | None = None
    error: str | None = None

    __test__ = False  # not a pytest class

    @property
    def ok(self) -> bool:
        return self.error is None

    def covers(self, level: float) -> bool:
        """True when the value does not exceed the reference quantile at ``level``."""
        return bool(self.value <= self.critical[level])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "ref_dist": self.ref_dist,
            "pvalue": self.pvalue,
            "critical": {str(k): v for k, v in self.critical.items()},
            "weights": None if self.weights is None else self.weights.tolist(),
            "nu": self.nu,
            "error": self.error,
        }


def failed(name: str, exc: BaseException) -> TestResult:
    return TestResult(name, math.nan, "none", math.nan, error=f"{type(exc).__name__}: {exc}")


def _chisq_result(name, value, df, levels, *, weights=None, nu=None, ref=None):
    value = float(value)
    critical = {lv: float(chisq_quantile(lv, df)) for lv in levels}
    return TestResult(name, value, ref or f"chisq({df:g})", float(chisq_sf(value, df)), critical, weights, nu)


def _blocks(godambe: GodambeEstimate, interest_idx):
    idx = np.ix_(interest_idx, interest_idx)
    return sym_inverse(godambe.H)[idx], godambe.Ginv[idx]


def _check_at(godambe, expected):
    if godambe.at is not None and godambe.at != expected:
        raise ValueError(f"matrices evaluated at the {godambe.at} fit, expected {expected}")


def eigen_weights(godambe: GodambeEstimate, interest_idx) -> np.ndarray:
    """Eigenvalues of ``(H^{gg})^{-1} G^{gg}``, descending."""
    h_gg, g_gg = _blocks(godambe, list(interest_idx))
    w = pencil_eigvals(g_gg, h_gg)
    tol = 1e-8 * max(1.0, float(np.abs(w).max()))
    if np.any(w < -tol):
        raise ValueError(f"negative eigenvalue weights {w}")
    return np.maximum(w, 0.0)


def wald_stat(fit_constrained: FitResult, gamma_hat, godambe_at_constrained: GodambeEstimate,
              levels=DEFAULT_LEVELS) -> TestResult:
    _check_at(godambe_at_constrained, "constrained")
    idx = list(fit_constrained.theta_hat.interest_idx)
    d = np.asarray(gamma_hat, dtype=float) - fit_constrained.theta_hat.gamma
    g_gg = godambe_at_constrained.Ginv[np.ix_(idx, idx)]
    value = max(0.0, float(d @ sym_inverse(g_gg) @ d))
    return _chisq_result("cW", value, len(idx), levels)


def score_stat(model: CompositeModel, data, fit_constrained: FitResult,
               godambe_at_constrained: GodambeEstimate, levels=DEFAULT_LEVELS) -> TestResult:
    _check_at(godambe_at_constrained, "constrained")
    value, _ = _score_parts(model, data, fit_constrained, godambe_at_constrained)
    return _chisq_result("cS", value, fit_constrained.theta_hat.p, levels)


def _score_parts(model, data, fit_constrained, godambe):
    """``(cS, u' H^{gg} u)`` with ``u`` the interest block of the score at the constrained fit."""
    tp = fit_constrained.theta_hat
    idx = list(tp.interest_idx)
    u = model.score(tp.values, data)[idx]
    h_gg, g_gg = _blocks(godambe, idx)
    hu = h_gg @ u
    cs = max(0.0, float(hu @ sym_inverse(g_gg) @ hu))
    return cs, float(u @ hu)


def clr_value(fit_global: FitResult, fit_constrained: FitResult, tol=CLR_TOL) -> float:
    """``2 {cl(global) - cl(constrained)}``; small negatives from optimizer noise clamp to 0."""
    value = 2.0 * (fit_global.objective - fit_constrained.objective)
    if value < -tol * max(1.0, abs(fit_global.objective)):
        raise InconsistentFitError(f"constrained fit exceeds the global one by {-value / 2:.3g}")
    return max(0.0, value)


def _weighted_sample(weights, stream, draws):
    if draws < 10_000:
        raise ValueError("need at least 10^4 reference draws")
    z = as_generator(stream).standard_normal((int(draws), weights.size))
    return (z * z) @ weights


def clr(fit_global: FitResult, fit_constrained: FitResult, weights, stream,
        levels=DEFAULT_LEVELS, draws=DEFAULT_DRAWS) -> TestResult:
    """Unadjusted ratio statistic against the Monte Carlo weighted chi-square law."""
    weights = np.asarray(weights, dtype=float)
    value = clr_value(fit_global, fit_constrained)
    sample = _weighted_sample(weights, stream, draws)
    critical = {lv: float(np.quantile(sample, lv)) for lv in levels}
    ref = "weighted_chisq(" + ", ".join(f"{w:.6g}" for w in weights) + ")"
    return TestResult("cLR", value, ref, float(np.mean(sample > value)), critical, weights)


def clr_first_moment(clr_value, weights, levels=DEFAULT_LEVELS) -> TestResult:
    weights = np.asarray(weights, dtype=float)
    return _chisq_result("cLR1", clr_value / weights.mean(), weights.size, levels, weights=weights)


def satterthwaite(weights):
    """``(kappa, nu)`` with ``kappa = sum w^2 / sum w`` and ``nu = (sum w)^2 / sum w^2``."""
    weights = np.asarray(weights, dtype=float)
    s1, s2 = weights.sum(), (weights * weights).sum()
    if s1 <= 0:
        raise ValueError("weights must not all be zero")
    return s2 / s1, s1 * s1 / s2


def clr_satterthwaite(clr_value, weights, levels=DEFAULT_LEVELS) -> TestResult:
    weights = np.asarray(weights, dtype=float)
    kappa, nu = satterthwaite(weights)
    return _chisq_result("cLR2", clr_value / kappa, nu, levels, weights=weights, nu=float(nu))


def clr_chandler_bate(clr_value, gamma_hat, gamma, godambe_at_global: GodambeEstimate,
                      interest_idx, levels=DEFAULT_LEVELS) -> TestResult:
    _check_at(godambe_at_global, "global")
    idx = list(interest_idx)
    d = np.asarray(gamma_hat, dtype=float) - np.asarray(gamma, dtype=float)
    if not np.any(d):
        return _chisq_result("cLR_CB", 0.0, len(idx), levels)
    num = float(d @ sym_inverse(godambe_at_global.Ginv[np.ix_(idx, idx)]) @ d)
    den = float(d @ godambe_at_global.H[np.ix_(idx, idx)] @ d)
    return _chisq_result("cLR_CB", num / den * clr_value, len(idx), levels)


def clr_invariant(clr_value, score_stat_value, model, data, fit_constrained: FitResult,
                  godambe_at_constrained: GodambeEstimate, levels=DEFAULT_LEVELS) -> TestResult:
    _check_at(godambe_at_constrained, "constrained")
    p = fit_constrained.theta_hat.p
    _, denom = _score_parts(model, data, fit_constrained, godambe_at_constrained)
    if denom <= 0.0:
        if clr_value == 0.0:
            return _chisq_result("cLR_I", 0.0, p, levels)
        raise InconsistentFitError("zero constrained interest score with a positive ratio statistic")
    return _chisq_result("cLR_I", score_stat_value / denom * clr_value, p, levels)


@dataclass(frozen=True)
class SuiteOptions:
    levels: tuple = DEFAULT_LEVELS
    statistics: tuple = STATISTICS
    M: int = DEFAULT_M
    h_form: str | None = None
    weights_at: str = "constrained"
    draws: int = DEFAULT_DRAWS
    init: np.ndarray | None = None
    stream: RngStream = field(default_factory=lambda: RngStream(0))


@dataclass(frozen=True)
class TestSuiteResult:
    results: dict
    fit_global: FitResult
    fit_constrained: FitResult
    gamma0: np.ndarray
    interest_idx: tuple
    method: str
    godambe: GodambeEstimate | None = None
    godambe_global: GodambeEstimate | None = None
    weights: np.ndarray | None = None

    __test__ = False

    @property
    def converged(self) -> bool:
        return self.fit_global.converged and self.fit_constrained.converged

    def __getitem__(self, name) -> TestResult:
        return self.results[name]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "interest_idx": list(self.interest_idx),
            "gamma0": self.gamma0.tolist(),
            "converged": self.converged,
            "fit_global": self.fit_global.to_dict(),
            "fit_constrained": self.fit_constrained.to_dict(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "statistics": {k: v.to_dict() for k, v in self.results.items()},
            "godambe_constrained": None if self.godambe is None else self.godambe.to_dict(),
            "godambe_global": None if self.godambe_global is None else self.godambe_global.to_dict(),
        }


def fit_pair(model: CompositeModel, data, interest_idx, gamma0, init=None):
    """Global and constrained fits, refitting globally if the constrained optimum is higher."""
    if init is None:
        init = model.default_init(data)
    start = PartitionedParams(model.check_params(init), tuple(interest_idx), model.param_names)
    fg = mcle(model, data, start)
    fc = constrained_mcle(model, data, gamma0, fg.theta_hat)
    if fc.objective > fg.objective:
        alt = mcle(model, data, fc.theta_hat)
        if alt.objective >= fg.objective:
            fg = alt
    return fg, fc


def test_suite(model: CompositeModel, data, interest_idx, gamma0, matrix_method: str,
               options: SuiteOptions | None = None, fits=None, godambe=None) -> TestSuiteResult:
    """All requested statistics for ``H0: gamma = gamma0`` on one dataset.

    A failure in one statistic is recorded on its :class:`TestResult` and does
    not affect the others. ``fits`` may pass precomputed ``(global, constrained)``.
    """
    opts = options or SuiteOptions()
    interest_idx = tuple(int(i) for i in interest_idx)
    gamma0 = np.asarray(gamma0, dtype=float).ravel()
    fg, fc = fits if fits is not None else fit_pair(model, data, interest_idx, gamma0, opts.init)
    levels = tuple(opts.levels)
    wanted = set(opts.statistics)
    stream = opts.stream
    out = {}

    def godambe_at(fit, tag, child):
        return estimate_godambe(model, fit.theta_hat.values, data, matrix_method, M=opts.M,
                                stream=stream.child(child), h_form=opts.h_form, at=tag)

    gc = gg = None
    errors = {}
    if godambe is not None:
        gc, gg = godambe
    if gc is None:
        try:
            gc = godambe_at(fc, "constrained", 1)
        except Exception as exc:  # noqa: BLE001 - isolated per statistic
            errors["constrained"] = exc
    if gg is None and ("cLR_CB" in wanted or opts.weights_at == "global"):
        try:
            gg = godambe_at(fg, "global", 2)
        except Exception as exc:  # noqa: BLE001
            errors["global"] = exc

    def run(name, fn):
        if name not in wanted:
            return None
        try:
            res = fn()
        except Exception as exc:  # noqa: BLE001
            res = failed(name, exc)
        out[name] = res
        return res

    def need(which):
        g = gc if which == "constrained" else gg
        if g is None:
            raise errors.get(which, RuntimeError(f"no matrices at the {which} fit"))
        return g

    weights = None
    try:
        weights = eigen_weights(need(opts.weights_at), interest_idx)
    except Exception as exc:  # noqa: BLE001
        errors["weights"] = exc

    def need_weights():
        if weights is None:
            raise errors["weights"]
        return weights

    try:
        value = clr_value(fg, fc)
    except Exception as exc:  # noqa: BLE001
        value, errors["cLR"] = None, exc

    def need_clr():
        if value is None:
            raise errors["cLR"]
        return value

    run("cW", lambda: wald_stat(fc, fg.theta_hat.gamma, need("constrained"), levels))
    cs = run("cS", lambda: score_stat(model, data, fc, need("constrained"), levels))
    run("cLR", lambda: clr(fg, fc, need_weights(), stream.child(0), levels, opts.draws))
    run("cLR1", lambda: clr_first_moment(need_clr(), need_weights(), levels))
    run("cLR2", lambda: clr_satterthwaite(need_clr(), need_weights(), levels))
    run("cLR_CB", lambda: clr_chandler_bate(need_clr(), fg.theta_hat.gamma, gamma0, need("global"),
                                            interest_idx, levels))

    def invariant():
        s = cs.value if cs is not None and cs.ok else score_stat(model, data, fc, need("constrained")).value
        return clr_invariant(need_clr(), s, model, data, fc, need("constrained"), levels)

    run("cLR_I", invariant)
    ordered = {k: out[k] for k in STATISTICS if k in out}
    return TestSuiteResult(ordered, fg, fc, gamma0, interest_idx, matrix_method, gc, gg, weights)


def full_lrt(design, data, interest_idx, gamma0, init=None, levels=DEFAULT_LEVELS):
    """Ordinary likelihood ratio test from the full Gaussian random field likelihood."""
    from .fit import mle_full

    fg = mle_full(design, data, init, interest_idx=tuple(interest_idx))
    fc = mle_full(design, data, fg.theta_hat.values, gamma_fixed=gamma0, interest_idx=tuple(interest_idx))
    if fc.objective > fg.objective:
        alt = mle_full(design, data, fc.theta_hat.values, interest_idx=tuple(interest_idx))
        if alt.objective >= fg.objective:
            fg = alt
    value = clr_value(fg, fc)
    res = _chisq_result("LRT", value, len(interest_idx), levels)
    return res, fg, fc
