"""Normal, bivariate normal and chi-square distribution primitives.

The bivariate normal orthant probability follows Genz's variant of the
Drezner-Wesolowsky method: for ``|r| < 0.925`` the correlation-path integral

    Phi2(h, k; r) = Phi(h) Phi(k) + int_0^r phi2(h, k; t) dt

is evaluated with 20-point Gauss-Legendre quadrature after the substitution
``t = sin(u)``; for larger ``|r|`` the integral is rewritten around ``r = +-1``
where the path integrand develops a boundary layer. Both branches are accurate
to about 1e-15 absolute.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special, stats

from .rng import as_generator

_GL_X, _GL_W = leggauss(20)
# Gauss-Legendre order by |r| band, as in Genz's BVND
_ORDER_BANDS = ((0.0, 0.3), (0.3, 0.75), (0.75, 0.925))
_GL = dict(zip(_ORDER_BANDS, (leggauss(6), leggauss(12), leggauss(20))))
_TWO_PI = 2.0 * math.pi
_SQRT_TWO_PI = math.sqrt(_TWO_PI)
_DEGENERATE_R = 1.0 - 1e-12


def norm_cdf(x):
    """Standard normal CDF (erfc based, accurate in both tails)."""
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)


def _bvn_upper(h, k, r):
    """P(X > h, Y > k) for 1-d arrays with ``|r| <= _DEGENERATE_R``."""
    out = np.empty_like(h)
    abs_r = np.abs(r)

    for lo, hi in _ORDER_BANDS:
        band = (abs_r >= lo) & (abs_r < hi)
        if not band.any():
            continue
        x, w = _GL[(lo, hi)]
        hs, ks = h[band], k[band]
        # nodes depend on r only; many entries usually share a correlation
        ur, inv = np.unique(r[band], return_inverse=True)
        asr = np.arcsin(ur)
        sn = np.sin(0.5 * asr[:, None] * (x[None, :] + 1.0))
        denom = 1.0 / (1.0 - sn * sn)
        terms = np.exp(
            (sn * denom)[inv] * (hs * ks)[:, None] - denom[inv] * (0.5 * (hs * hs + ks * ks))[:, None]
        )
        out[band] = terms @ w * asr[inv] / (2.0 * _TWO_PI) + norm_cdf(-hs) * norm_cdf(-ks)

    big = abs_r >= 0.925
    if big.any():
        hb, kb, rb = h[big], k[big].copy(), r[big]
        neg = rb < 0
        kb[neg] = -kb[neg]
        hk = hb * kb
        a2 = (1.0 - rb) * (1.0 + rb)
        a = np.sqrt(a2)
        bs = (hb - kb) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        val = np.zeros_like(hb)

        asr = -0.5 * (bs / a2 + hk)
        ok = asr > -100.0
        val[ok] = (a * np.exp(asr) * (
            1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0
        ))[ok]
        ok = -hk < 100.0
        b = np.sqrt(bs)
        sp = _SQRT_TWO_PI * norm_cdf(-b / a)
        val[ok] -= (np.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0))[ok]

        a_half = 0.5 * a
        xs = (a_half[:, None] * (_GL_X[None, :] + 1.0)) ** 2
        rs = np.sqrt(1.0 - xs)
        asr = -0.5 * (bs[:, None] / xs + hk[:, None])
        with np.errstate(under="ignore"):
            ep = np.exp(-hk[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
            sp = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
            contrib = np.where(asr > -100.0, np.exp(np.maximum(asr, -745.0)) * (ep - sp), 0.0)
        val += a_half * (contrib @ _GL_W)
        val = -val / _TWO_PI

        pos = ~neg
        res = np.empty_like(hb)
        res[pos] = val[pos] + norm_cdf(-np.maximum(hb[pos], kb[pos]))
        # r < 0: undo the reflection of k
        hn, kn, vn = hb[neg], kb[neg], val[neg]
        h_ge_k = hn >= kn
        lo = np.where(hn < 0, norm_cdf(kn) - norm_cdf(hn), norm_cdf(-hn) - norm_cdf(-kn))
        res[neg] = np.where(h_ge_k, -vn, lo - vn)
        out[big] = res

    return out


def bvn_cdf(h, k, r):
    """Standard bivariate normal CDF ``P(Z1 <= h, Z2 <= k)`` with correlation ``r``.

    Broadcasts over array inputs. Correlations within 1e-12 of +-1 use the
    degenerate limits ``Phi(min(h, k))`` and ``max(0, Phi(h) + Phi(k) - 1)``.
    """
    h, k, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, r)))
    shape = h.shape
    h, k, r = h.ravel(), k.ravel(), r.ravel()
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(k)) and np.all(np.isfinite(r))):
        raise ValueError("bvn_cdf requires finite h, k and r")
    if np.any(np.abs(r) > 1.0):
        raise ValueError("correlation must lie in [-1, 1]")

    out = np.empty_like(h)
    up = r > _DEGENERATE_R
    down = r < -_DEGENERATE_R
    mid = ~(up | down)
    if up.any():
        out[up] = norm_cdf(np.minimum(h[up], k[up]))
    if down.any():
        out[down] = np.maximum(0.0, norm_cdf(h[down]) + norm_cdf(k[down]) - 1.0)
    if mid.any():
        out[mid] = _bvn_upper(-h[mid], -k[mid], r[mid])
    np.clip(out, 0.0, 1.0, out=out)
    return out.reshape(shape) if shape else float(out[0])


def chisq_quantile(prob, df):
    """Quantile of the chi-square law with (possibly non-integer) ``df``."""
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    if np.any(np.asarray(df) <= 0):
        raise ValueError("df must be positive")
    return stats.chi2.ppf(prob, df)


def chisq_sf(x, df):
    return stats.chi2.sf(x, df)


def _weighted_chisq_draws(weights, draws, stream):
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size == 0 or np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be non-negative with at least one positive entry")
    if draws < 10_000:
        raise ValueError(f"need at least 10^4 draws, got {draws}")
    z = as_generator(stream).standard_normal((int(draws), weights.size))
    return (z * z) @ weights


def weighted_chisq_quantile(weights, prob, stream, draws=100_000):
    """Monte Carlo quantile of ``sum_i w_i chi2_1``; ``prob`` may be a list."""
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    sample = _weighted_chisq_draws(weights, draws, stream)
    return np.quantile(sample, prob)


def weighted_chisq_sf(x, weights, stream, draws=100_000):
    """Monte Carlo upper tail ``P(sum_i w_i chi2_1 > x)``."""
    sample = _weighted_chisq_draws(weights, draws, stream)
    return float(np.mean(sample > x))
