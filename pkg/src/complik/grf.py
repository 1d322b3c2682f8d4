"""Gaussian random field with stable covariance under pairwise likelihood.

Each unit ``y_i`` is a q-vector observed at fixed spatial locations with
mean ``mu 1_q`` and covariance ``sigma2 * exp(-(d_jk / lambda) ** alpha)``.
Parameters are ordered ``(mu, sigma2, lambda, alpha)`` everywhere.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .core.linalg import NotPositiveDefiniteError, symmetrize
from .core.model import CompositeModel
from .core.rng import RngStream, as_generator

PARAM_NAMES = ("mu", "sigma2", "lambda", "alpha")
_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateCorrelationError(ValueError):
    """A weighted pair has correlation 1, so its bivariate density is singular."""


class GrfParams(NamedTuple):
    mu: float
    sigma2: float
    lam: float
    alpha: float


def check_params(params) -> np.ndarray:
    theta = np.asarray(params, dtype=float).ravel()
    if theta.size != 4:
        raise ValueError(f"GRF parameters are (mu, sigma2, lambda, alpha), got {theta.size} values")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"non-finite GRF parameters {theta}")
    _, sigma2, lam, alpha = theta
    if sigma2 <= 0 or lam <= 0:
        raise ValueError(f"sigma2 and lambda must be positive, got {sigma2}, {lam}")
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    return theta


class GrfDesign:
    """Locations, distances and 0/1 pair weights.

    With ``weights=None`` a pair is weighted iff its distance is at most ``d0``
    (all pairs when ``d0`` is None). ``allow_empty`` admits designs without
    weighted pairs, which only the full likelihood can use.
    """

    def __init__(self, locations, d0=None, weights=None, allow_empty=False):
        loc = np.array(locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise ValueError("locations must be a (q, dim) array")
        self.locations = loc
        self.q = loc.shape[0]
        self.dist = cdist(loc, loc)
        off = ~np.eye(self.q, dtype=bool)
        if np.any(self.dist[off] == 0):
            raise ValueError("duplicate locations are not allowed")
        if d0 is not None and d0 < 0:
            raise ValueError("d0 must be non-negative")
        self.d0 = None if d0 is None else float(d0)

        if weights is None:
            w = off.copy() if d0 is None else (self.dist <= d0) & off
        else:
            w = np.asarray(weights)
            if w.shape != (self.q, self.q):
                raise ValueError(f"weights must be {self.q}x{self.q}")
            if not np.all(np.isin(w, (0, 1))):
                raise ValueError("weights must be 0/1")
            if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0):
                raise ValueError("weights must be symmetric with zero diagonal")
            w = w.astype(bool)
        self.weights = w.astype(np.int8)
        j, k = np.nonzero(np.triu(w, 1))
        if j.size == 0 and not allow_empty:
            raise ValueError("design has no weighted pairs")
        self.pj = j
        self.pk = k
        self.pair_dist = self.dist[j, k]

    @classmethod
    def grid(cls, side: int, d0=3.0):
        """Integer grid ``{0, ..., side-1}^2`` (side 8 gives q = 64)."""
        if side < 1:
            raise ValueError("grid side must be positive")
        xs = np.arange(side, dtype=float)
        loc = np.array([(x, y) for x in xs for y in xs])
        return cls(loc, d0=d0)

    @property
    def n_pairs(self) -> int:
        return self.pj.size

    def __repr__(self):
        return f"GrfDesign(q={self.q}, d0={self.d0}, pairs={self.n_pairs})"


def stable_corr(d, lam, alpha):
    """``exp(-(d / lam) ** alpha)``."""
    return np.exp(-((np.asarray(d, dtype=float) / lam) ** alpha))


def _corr_and_derivs(d, lam, alpha):
    """Correlation, ``1 - rho^2``, and d rho / d(lambda, alpha) for distances ``d``."""
    d = np.asarray(d, dtype=float)
    ratio = d / lam
    with np.errstate(divide="ignore"):
        log_ratio = np.where(d > 0, np.log(np.where(d > 0, ratio, 1.0)), 0.0)
    t = ratio**alpha
    rho = np.exp(-t)
    one_minus = (-np.expm1(-t)) * (1.0 + rho)
    d_lam = alpha * rho / lam * t
    d_alpha = -rho * t * log_ratio
    return rho, one_minus, np.stack([d_lam, d_alpha], axis=-1)


def corr_matrix(design: GrfDesign, lam, alpha) -> np.ndarray:
    return stable_corr(design.dist, lam, alpha)


def _pair_terms(design, theta):
    _, sigma2, lam, alpha = check_params(theta)
    rho, s, drho = _corr_and_derivs(design.pair_dist, lam, alpha)
    if np.any(s <= 0):
        raise DegenerateCorrelationError("a weighted pair has correlation 1")
    return rho, s, drho


def simulate(design: GrfDesign, params, n: int, stream) -> np.ndarray:
    mu, sigma2, lam, alpha = check_params(params)
    chol = _cov_cholesky(design, sigma2, lam, alpha)
    z = as_generator(stream).standard_normal((int(n), design.q))
    return mu + z @ chol.T


def _cov_cholesky(design, sigma2, lam, alpha):
    cov = sigma2 * corr_matrix(design, lam, alpha)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("GRF covariance is not positive definite") from exc


def pairwise_loglik(design: GrfDesign, params, data) -> float:
    """Pairwise log-likelihood without the additive ``-log(2 pi)`` per pair."""
    mu, sigma2, _, _ = check_params(params)
    rho, s, _ = _pair_terms(design, params)
    e = np.asarray(data, dtype=float) - mu
    ej, ek = e[..., design.pj], e[..., design.pk]
    a = ej * ej + ek * ek - 2.0 * rho * ej * ek
    n = e.shape[-2]
    return float(
        n * np.sum(-math.log(sigma2) - 0.5 * np.log(s)) - np.sum(a / (2.0 * sigma2 * s))
    )


def component_scores(design: GrfDesign, params, data) -> np.ndarray:
    """Per-unit, per-weighted-pair scores with shape ``(..., n, P, 4)``."""
    mu, sigma2, _, _ = check_params(params)
    rho, s, drho = _pair_terms(design, params)
    e = np.asarray(data, dtype=float) - mu
    ej, ek = e[..., design.pj], e[..., design.pk]
    cross = ej * ek
    a = ej * ej + ek * ek - 2.0 * rho * cross
    out = np.empty(e.shape[:-1] + (design.n_pairs, 4))
    out[..., 0] = (ej + ek) / (sigma2 * (1.0 + rho))
    out[..., 1] = -1.0 / sigma2 + a / (2.0 * sigma2 * sigma2 * s)
    c = (rho - rho * a / (sigma2 * s) + cross / sigma2) / s
    out[..., 2] = c * drho[:, 0]
    out[..., 3] = c * drho[:, 1]
    return out


def pairwise_score(design: GrfDesign, params, data) -> np.ndarray:
    """Gradient of :func:`pairwise_loglik` in the order (mu, sigma2, lambda, alpha)."""
    return component_scores(design, params, data).sum(axis=(-3, -2))


def analytic_H(design: GrfDesign, params, n: int) -> np.ndarray:
    _, sigma2, _, _ = check_params(params)
    rho, s, drho = _pair_terms(design, params)
    h = np.zeros((4, 4))
    h[0, 0] = 2.0 * n / sigma2 * np.sum(1.0 / (1.0 + rho))
    h[1, 1] = n / sigma2**2 * design.n_pairs
    h[1, 2:] = h[2:, 1] = -n / sigma2 * (drho * (rho / s)[:, None]).sum(axis=0)
    h[2:, 2:] = n * (drho * ((1.0 + rho**2) / s**2)[:, None]).T @ drho
    return h


def analytic_J(design: GrfDesign, params, n: int, chunk_elems: int = 250_000) -> np.ndarray:
    """Variability matrix from the closed-form fourth-moment sums over pairs of pairs.

    The double sum over weighted pairs ``(j, k)`` and ``(l, m)`` costs O(P^2)
    and is evaluated in row blocks of at most ``chunk_elems`` pair-pairs.
    """
    _, sigma2, lam, alpha = check_params(params)
    rho, s, drho = _pair_terms(design, params)
    R = corr_matrix(design, lam, alpha)
    pj, pk = design.pj, design.pk
    P = design.n_pairs
    inv_s = 1.0 / s
    inv_1p = 1.0 / (1.0 + rho)

    j_mumu = 0.0
    quad_sum = 0.0  # sum_ab B_ab / (4 s_a s_b)
    j_sg = np.zeros(2)
    j_gg = np.zeros((2, 2))

    step = max(1, chunk_elems // P)
    r_b = rho[None, :]
    for a0 in range(0, P, step):
        sl = slice(a0, min(P, a0 + step))
        ja, ka = pj[sl], pk[sl]
        r_a = rho[sl][:, None]
        r_jl = R[np.ix_(ja, pj)]
        r_jm = R[np.ix_(ja, pk)]
        r_kl = R[np.ix_(ka, pj)]
        r_km = R[np.ix_(ka, pk)]

        j_mumu += inv_1p[sl] @ (r_jl + r_jm + r_kl + r_km) @ inv_1p

        jklm = r_a * r_b + r_jl * r_km + r_jm * r_kl
        jjll = 1.0 + 2.0 * r_jl**2
        jjmm = 1.0 + 2.0 * r_jm**2
        kkll = 1.0 + 2.0 * r_kl**2
        kkmm = 1.0 + 2.0 * r_km**2
        jjlm = r_b + 2.0 * r_jl * r_jm
        kklm = r_b + 2.0 * r_kl * r_km
        jkll = r_a + 2.0 * r_jl * r_kl
        jkmm = r_a + 2.0 * r_jm * r_km
        # E(A_ijk A_ilm) / sigma^4
        eaa = (
            jjll + jjmm + kkll + kkmm
            - 2.0 * r_b * jjlm - 2.0 * r_b * kklm
            - 2.0 * r_a * jkll - 2.0 * r_a * jkmm
            + 4.0 * r_a * r_b * jklm
        )

        quad_sum += 0.25 * inv_s[sl] @ eaa @ inv_s

        s_a = s[sl][:, None]
        s_b = s[None, :]
        brace_sg = 2.0 * r_a * s_b - r_a * eaa / s_a + jkll + jkmm - 2.0 * r_b * jklm
        j_sg += drho[sl].T @ ((brace_sg @ inv_s) * inv_s[sl])

        ka_ = r_a / s_a
        kb_ = r_b / s_b
        brace_gg = (
            -r_a * r_b + jklm
            - ka_ * (jjlm + kklm - 2.0 * r_a * jklm)
            - kb_ * (jkll + jkmm - 2.0 * r_b * jklm)
            + ka_ * kb_ * eaa
        )
        weighted = brace_gg * inv_s[sl][:, None] * inv_s[None, :]
        j_gg += drho[sl].T @ weighted @ drho

    J = np.zeros((4, 4))
    J[0, 0] = n / sigma2 * j_mumu
    J[1, 1] = n / sigma2**2 * (quad_sum - P * P)
    J[1, 2:] = J[2:, 1] = n / (2.0 * sigma2) * j_sg
    J[2:, 2:] = n * symmetrize(j_gg)
    return J


def full_loglik(design: GrfDesign, params, data) -> float:
    """Exact multivariate normal log-likelihood of ``n`` independent units."""
    mu, sigma2, lam, alpha = check_params(params)
    chol = _cov_cholesky(design, sigma2, lam, alpha)
    e = np.atleast_2d(np.asarray(data, dtype=float) - mu)
    n, q = e.shape
    z = linalg.solve_triangular(chol, e.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * n * (q * _LOG_2PI + logdet) - 0.5 * np.sum(z * z))


def full_score(design: GrfDesign, params, data) -> np.ndarray:
    mu, sigma2, lam, alpha = check_params(params)
    chol = _cov_cholesky(design, sigma2, lam, alpha)
    e = np.atleast_2d(np.asarray(data, dtype=float) - mu)
    n = e.shape[0]
    cinv = linalg.cho_solve((chol, True), np.eye(design.q))
    rho, _, drho = _corr_and_derivs(design.dist, lam, alpha)
    np.fill_diagonal(rho, 1.0)
    u = e @ cinv  # rows: Sigma^{-1} e_i
    out = np.empty(4)
    out[0] = u.sum()
    S = u.T @ u  # sum_i Sigma^{-1} e_i e_i^T Sigma^{-1}
    for a, dsig in enumerate((rho, sigma2 * drho[..., 0], sigma2 * drho[..., 1]), start=1):
        out[a] = -0.5 * n * np.sum(cinv * dsig) + 0.5 * np.sum(S * dsig)
    return out


class GrfModel(CompositeModel):
    param_names = PARAM_NAMES
    transforms = ("identity", "log", "log", "logit2")
    has_analytic_score = True
    has_analytic_matrices = True

    def __init__(self, design: GrfDesign):
        self.design = design

    def __repr__(self):
        return f"GrfModel({self.design!r})"

    @property
    def n_components(self):
        return self.design.n_pairs

    def check_params(self, theta):
        return check_params(theta)

    def simulate(self, theta, n, stream):
        return simulate(self.design, theta, n, stream)

    def simulate_many(self, theta, n, M, stream: RngStream, start=0):
        mu, sigma2, lam, alpha = check_params(theta)
        chol = _cov_cholesky(self.design, sigma2, lam, alpha)
        z = np.stack([
            stream.child(m).generator().standard_normal((int(n), self.design.q))
            for m in range(start, start + M)
        ])
        return mu + z @ chol.T

    def loglik(self, theta, data):
        return pairwise_loglik(self.design, theta, data)

    def component_scores(self, theta, data):
        return component_scores(self.design, theta, data)

    def score(self, theta, data):
        return pairwise_score(self.design, theta, data)

    def analytic_H(self, theta, n):
        return analytic_H(self.design, theta, n)

    def analytic_J(self, theta, n):
        return analytic_J(self.design, theta, n)

    def default_init(self, data):
        y = np.asarray(data, dtype=float)
        iu = np.triu_indices(self.design.q, 1)
        lam = float(np.median(self.design.dist[iu])) if iu[0].size else 1.0
        var = float(np.var(y)) if y.size > 1 else 1.0
        return np.array([float(np.mean(y)), max(var, 1e-8), lam, 1.0])


class GrfFullModel(GrfModel):
    """The same field under its full multivariate normal likelihood (for the LRT)."""

    has_analytic_matrices = False

    def loglik(self, theta, data):
        return full_loglik(self.design, theta, data)

    def score(self, theta, data):
        return full_score(self.design, theta, data)

    def component_scores(self, theta, data):
        raise NotImplementedError("the full likelihood has no pairwise components")
