"""Multivariate probit with a unit-level random intercept under pairwise likelihood.

Latent ``Z_ij = x_ij' beta + U_i + eps_ij`` with ``U_i ~ N(0, sigma2)`` and
unit-variance errors, observed as ``Y_ij = 1{Z_ij > 0}``. Within a unit the
standardized latents are equicorrelated with ``rho = sigma2 / (1 + sigma2)``.
Parameters are ``(beta_0, ..., beta_{r-1}, rho)``.

Every pair contributes one of four orthant probabilities. They are evaluated
in the signed form ``Phi2(s1 l1, s2 l2; s1 s2 rho)`` with ``s = 2y - 1``, which
equals the complement formulas but keeps full relative precision in small
cells. Scores are central differences of the pair log-probabilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core.distributions import bvn_cdf, norm_ppf  # noqa: F401 (norm_ppf re-exported)
from .core.model import CompositeModel, fd_step
from .core.rng import as_generator

PROB_FLOOR = 1e-300


class CellUnderflowWarning(RuntimeWarning):
    """A pair probability underflowed and was floored before taking logs."""


@dataclass(frozen=True)
class ProbitDesign:
    """Covariates ``x_ij`` as an ``(n, q, r)`` array whose first column is the intercept."""

    covariates: np.ndarray

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        if x.ndim != 3:
            raise ValueError("covariates must have shape (n, q, r)")
        if x.shape[2] < 1 or not np.all(x[..., 0] == 1.0):
            raise ValueError("first covariate column must be the intercept (all ones)")
        if x.shape[1] < 2:
            raise ValueError("need q >= 2 outcomes per unit")
        x.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        j, k = np.triu_indices(x.shape[1], 1)
        object.__setattr__(self, "_pj", j)
        object.__setattr__(self, "_pk", k)

    @classmethod
    def uniform(cls, n: int, q: int, stream, n_covariates: int = 1):
        """Intercept plus ``n_covariates`` columns drawn uniform on [-1, 1]."""
        u = as_generator(stream).uniform(-1.0, 1.0, size=(n, q, n_covariates))
        return cls(np.concatenate([np.ones((n, q, 1)), u], axis=2))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def q(self) -> int:
        return self.covariates.shape[1]

    @property
    def r(self) -> int:
        return self.covariates.shape[2]

    @property
    def pairs(self):
        return self._pj, self._pk


def check_params(theta, r: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != r + 1:
        raise ValueError(f"expected {r} regression coefficients plus rho, got {theta.size} values")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"non-finite probit parameters {theta}")
    if not 0.0 <= theta[-1] < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {theta[-1]}")
    return theta


def sigma2_from_rho(rho):
    return rho / (1.0 - rho)


def rho_from_sigma2(sigma2):
    return sigma2 / (1.0 + sigma2)


def linear_predictors(design: ProbitDesign, theta) -> np.ndarray:
    """``lambda_ij = x_ij' beta * sqrt(1 - rho)`` with shape ``(n, q)``."""
    theta = np.asarray(theta, dtype=float)
    return (design.covariates @ theta[:-1]) * np.sqrt(1.0 - theta[-1])


def _log_floor(p):
    low = p < PROB_FLOOR
    if np.any(low):
        warnings.warn(
            f"{int(np.sum(low))} pair probabilities underflowed; floored at {PROB_FLOOR:g}",
            CellUnderflowWarning,
            stacklevel=3,
        )
        p = np.maximum(p, PROB_FLOOR)
    return np.log(p)


def pair_logprob(lam1, lam2, rho, y1, y2):
    """``log P(Y1 = y1, Y2 = y2)`` for latent thresholds ``lam1, lam2`` (broadcasts)."""
    s1 = 2.0 * np.asarray(y1, dtype=float) - 1.0
    s2 = 2.0 * np.asarray(y2, dtype=float) - 1.0
    p = bvn_cdf(s1 * lam1, s2 * lam2, s1 * s2 * np.asarray(rho, dtype=float))
    return _log_floor(np.asarray(p))


def _check_data(design, data):
    y = np.asarray(data)
    if y.shape[-2:] != (design.n, design.q):
        raise ValueError(f"data must have trailing shape {(design.n, design.q)}, got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("probit data must be binary")
    return y.astype(np.int8)


def pairwise_loglik(design: ProbitDesign, theta, data) -> float:
    theta = check_params(theta, design.r)
    y = _check_data(design, data)
    lam = linear_predictors(design, theta)
    pj, pk = design.pairs
    return float(np.sum(pair_logprob(lam[:, pj], lam[:, pk], theta[-1], y[..., pj], y[..., pk])))


def cell_logprob_table(design: ProbitDesign, theta) -> np.ndarray:
    """Log-probabilities of the four cells of every pair, shape ``(n, P, 4)``.

    Cell index is ``2 * y_j + y_k``.
    """
    theta = check_params(theta, design.r)
    lam = linear_predictors(design, theta)
    pj, pk = design.pairs
    l1 = lam[:, pj][..., None]
    l2 = lam[:, pk][..., None]
    y1 = np.array([0, 0, 1, 1])
    y2 = np.array([0, 1, 0, 1])
    return pair_logprob(l1, l2, theta[-1], y1, y2)


def cell_score_table(design: ProbitDesign, theta) -> np.ndarray:
    """Finite-difference scores of every cell of every pair, shape ``(n, P, 4, r + 1)``.

    Step ``cbrt(eps) * max(1, |theta_i|)``; one-sided when rho is within a step
    of its bounds.
    """
    theta = check_params(theta, design.r)
    h = fd_step(theta)
    d = theta.size
    out = np.empty((design.n, design.pairs[0].size, 4, d))
    base = None
    for a in range(d):
        up, dn = theta.copy(), theta.copy()
        up[a] += h[a]
        dn[a] -= h[a]
        if a == d - 1 and dn[a] < 0.0:
            base = cell_logprob_table(design, theta) if base is None else base
            out[..., a] = (cell_logprob_table(design, up) - base) / h[a]
        elif a == d - 1 and up[a] >= 1.0:
            base = cell_logprob_table(design, theta) if base is None else base
            out[..., a] = (base - cell_logprob_table(design, dn)) / h[a]
        else:
            out[..., a] = (cell_logprob_table(design, up) - cell_logprob_table(design, dn)) / (2.0 * h[a])
    return out


def cell_hessian_table(design: ProbitDesign, theta) -> np.ndarray:
    """Second differences of every cell log-probability, shape ``(n, P, 4, d, d)``.

    Step ``eps**(1/4) * max(1, |theta_i|)``; the stencil is shifted inward when
    rho sits within a step of its bounds.
    """
    theta = check_params(theta, design.r).copy()
    d = theta.size
    h = fd_step(theta, 0.25)
    theta[-1] = min(max(theta[-1], 1.01 * h[-1]), 1.0 - 1.01 * h[-1])
    f0 = cell_logprob_table(design, theta)
    out = np.empty(f0.shape + (d, d))

    def at(**shift):
        t = theta.copy()
        for a, s in shift.items():
            t[int(a[1:])] += s
        return cell_logprob_table(design, t)

    for a in range(d):
        ha = h[a]
        out[..., a, a] = (at(**{f"i{a}": ha}) - 2.0 * f0 + at(**{f"i{a}": -ha})) / (ha * ha)
        for b in range(a + 1, d):
            hb = h[b]
            v = (
                at(**{f"i{a}": ha, f"i{b}": hb}) - at(**{f"i{a}": ha, f"i{b}": -hb})
                - at(**{f"i{a}": -ha, f"i{b}": hb}) + at(**{f"i{a}": -ha, f"i{b}": -hb})
            ) / (4.0 * ha * hb)
            out[..., a, b] = out[..., b, a] = v
    return out


def _cells(design, data):
    y = _check_data(design, data)
    pj, pk = design.pairs
    return 2 * y[..., pj] + y[..., pk]


def component_scores(design: ProbitDesign, theta, data) -> np.ndarray:
    """Per-unit, per-pair scores ``(..., n, P, r + 1)`` looked up from the cell table."""
    table = cell_score_table(design, theta)
    cells = _cells(design, data)
    n, P = table.shape[:2]
    return table[np.arange(n)[:, None], np.arange(P)[None, :], cells]


def pairwise_score(design: ProbitDesign, theta, data) -> np.ndarray:
    return component_scores(design, theta, data).sum(axis=(-3, -2))


def simulate(design: ProbitDesign, theta, stream) -> np.ndarray:
    theta = check_params(theta, design.r)
    rng = as_generator(stream)
    sigma = np.sqrt(sigma2_from_rho(theta[-1]))
    u = rng.standard_normal((design.n, 1)) * sigma
    eps = rng.standard_normal((design.n, design.q))
    z = design.covariates @ theta[:-1] + u + eps
    return (z > 0).astype(np.int8)


class ProbitModel(CompositeModel):
    hessian_step_power = 0.25

    def __init__(self, design: ProbitDesign):
        self.design = design
        self.param_names = tuple(f"beta{i}" for i in range(design.r)) + ("rho",)
        self.transforms = ("identity",) * design.r + ("logit",)

    def __repr__(self):
        d = self.design
        return f"ProbitModel(n={d.n}, q={d.q}, r={d.r})"

    @property
    def n_components(self):
        return self.design.pairs[0].size

    def check_params(self, theta):
        return check_params(theta, self.design.r)

    def simulate(self, theta, n, stream):
        if n != self.design.n:
            raise ValueError(f"probit design fixes n={self.design.n}, got n={n}")
        return simulate(self.design, theta, stream)

    def loglik(self, theta, data):
        return pairwise_loglik(self.design, theta, data)

    def component_scores(self, theta, data):
        return component_scores(self.design, theta, data)

    def hessian(self, theta, data):
        """Hessian of the (batch-summed) pairwise log-likelihood from cell counts."""
        table = cell_hessian_table(self.design, theta)
        cells = _cells(self.design, data).reshape(-1, self.design.n, table.shape[1])
        counts = np.stack([(cells == c).sum(axis=0) for c in range(4)], axis=-1)
        return np.einsum("npc,npcab->ab", counts, table)

    def default_init(self, data):
        ybar = float(np.clip(np.mean(data), 0.01, 0.99))
        init = np.zeros(self.dim)
        init[0] = norm_ppf(ybar)
        init[-1] = 0.3
        return init
