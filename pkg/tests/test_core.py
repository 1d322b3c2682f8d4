import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from complik.core import (
    NotPositiveDefiniteError,
    PartitionedParams,
    RngStream,
    as_generator,
    bvn_cdf,
    chisq_quantile,
    norm_cdf,
    pencil_eigvals,
    repair_psd,
    sym_inverse,
    weighted_chisq_quantile,
    weighted_chisq_sf,
)


def _norm_oracle(x):
    pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    return 0.5 + integrate.quad(pdf, 0.0, x, epsabs=1e-14, epsrel=1e-14)[0]


def _bvn_oracle(h, k, r):
    c = 1.0 / (2 * math.pi * math.sqrt(1 - r * r))
    dens = lambda y, x: c * math.exp(-(x * x - 2 * r * x * y + y * y) / (2 * (1 - r * r)))
    val, _ = integrate.dblquad(dens, -12.0, h, -12.0, k, epsabs=1e-14, epsrel=1e-13)
    return val


def _chisq_cdf_oracle(x, df):
    # substitute x = t^2 so the integrand is smooth at 0 for df >= 1
    c = 1.0 / (2 ** (df / 2) * math.gamma(df / 2))
    f = lambda t: 2 * t * c * t ** (df - 2) * math.exp(-t * t / 2)
    return integrate.quad(f, 0.0, math.sqrt(x), epsabs=1e-15, epsrel=1e-13)[0]


def _chisq_quantile_oracle(p, df):
    return optimize.brentq(lambda x: _chisq_cdf_oracle(x, df) - p, 1e-6, 100.0, xtol=1e-14, rtol=1e-14)


class TestNormCdf:
    def test_center(self):
        assert norm_cdf(0.0) == 0.5

    def test_tail_saturation(self):
        assert abs(norm_cdf(40.0) - 1.0) <= 1e-15

    def test_quantile_975(self):
        assert abs(norm_cdf(1.959964) - 0.975) <= 1e-6
        assert abs(norm_cdf(1.959964) - _norm_oracle(1.959964)) <= 1e-14

    @given(st.floats(-30, 30))
    def test_reflection(self, x):
        assert abs(norm_cdf(-x) - (1 - norm_cdf(x))) <= 1e-15


class TestBvnCdf:
    def test_independent_quadrant(self):
        assert bvn_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_half_correlation_third(self):
        oracle = _bvn_oracle(0.0, 0.0, 0.5)
        assert abs(oracle - 1 / 3) < 1e-11
        assert abs(bvn_cdf(0.0, 0.0, 0.5) - 1 / 3) <= 1e-10

    @pytest.mark.parametrize("r", [-0.95, -0.5, 0.1, 0.5, 0.8, 0.93, 0.99])
    def test_marginalization(self, r):
        for x in (-3.0, -0.4, 0.0, 1.2, 2.5):
            assert abs(bvn_cdf(x, 40.0, r) - norm_cdf(x)) <= 1e-12

    @pytest.mark.parametrize("h,k,r", [(0.3, -0.7, 0.2), (-1.1, 0.4, 0.6), (1.5, 1.0, -0.85),
                                       (-0.5, -0.2, 0.95), (0.8, -1.3, -0.97), (2.0, 2.2, 0.999)])
    def test_double_integral_oracle(self, h, k, r):
        assert abs(bvn_cdf(h, k, r) - _bvn_oracle(h, k, r)) <= 1e-12

    def test_independence_grid(self):
        g = np.linspace(-3, 3, 10)
        h, k = np.meshgrid(g, g)
        np.testing.assert_allclose(bvn_cdf(h, k, 0.0), norm_cdf(h) * norm_cdf(k), atol=1e-12, rtol=0)

    def test_degenerate_limits(self):
        assert bvn_cdf(0.3, -0.2, 1.0) == pytest.approx(norm_cdf(-0.2), abs=1e-15)
        assert bvn_cdf(0.3, 0.5, -1.0) == pytest.approx(norm_cdf(0.3) + norm_cdf(0.5) - 1, abs=1e-15)
        assert bvn_cdf(-0.3, -0.5, -1.0) == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bvn_cdf(np.nan, 0.0, 0.1)
        with pytest.raises(ValueError):
            bvn_cdf(0.0, 0.0, 1.2)

    @settings(max_examples=200)
    @given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-0.999, 0.999))
    def test_symmetry_and_range(self, h, k, r):
        a = bvn_cdf(h, k, r)
        assert 0.0 <= a <= min(norm_cdf(h), norm_cdf(k)) + 1e-15
        assert abs(a - bvn_cdf(k, h, r)) <= 1e-15
        # P(X <= h, Y <= k) + P(X <= h, Y > k) = Phi(h)
        assert abs(a + bvn_cdf(h, -k, -r) - norm_cdf(h)) <= 1e-12

    @settings(max_examples=50)
    @given(st.floats(0.0, 1.5), st.floats(0.0, 1.5))
    def test_increasing_in_r(self, h, k):
        vals = bvn_cdf(h, k, np.linspace(-0.9, 0.9, 19))
        assert np.all(np.diff(vals) > 0)


class TestChisqQuantile:
    def test_exponential_median(self):
        assert abs(chisq_quantile(0.5, 2) - 2 * math.log(2)) <= 1e-9

    def test_one_df(self):
        q = chisq_quantile(0.95, 1)
        assert abs(q - 3.841459) <= 1e-5
        assert abs(q - _chisq_quantile_oracle(0.95, 1)) <= 1e-10 * q

    @pytest.mark.parametrize("df", [1.8, 1.6, 2.7, 5.0])
    def test_fractional_df(self, df):
        for p in (0.95, 0.99):
            assert chisq_quantile(p, df) == pytest.approx(_chisq_quantile_oracle(p, df), rel=1e-10, abs=1e-8)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_bad_prob(self, p):
        with pytest.raises(ValueError):
            chisq_quantile(p, 2)

    def test_bad_df(self):
        with pytest.raises(ValueError):
            chisq_quantile(0.5, 0.0)


class TestWeightedChisq:
    draws = 100_000

    def _prob_se(self, p, n):
        return math.sqrt(p * (1 - p) / n)

    def test_unit_weight(self, stream):
        q = weighted_chisq_quantile([1.0], 0.95, stream)
        from scipy import stats
        # quantile error measured on the probability scale
        assert abs(stats.chi2.cdf(q, 1) - 0.95) <= 3 * self._prob_se(0.95, self.draws)

    def test_equal_weights_scale(self, stream):
        from scipy import stats
        c, p = 2.5, 3
        q = weighted_chisq_quantile([c] * p, 0.99, stream)
        assert abs(stats.chi2.cdf(q / c, p) - 0.99) <= 3 * self._prob_se(0.99, self.draws)

    def test_large_sample_oracle(self, stream):
        q = weighted_chisq_quantile([2.0, 1.0], 0.95, stream)
        z = RngStream(99).generator().standard_normal((10_000_000, 2))
        oracle = (z * z) @ np.array([2.0, 1.0])
        f = np.mean(oracle <= q)
        se = math.sqrt(0.95 * 0.05 * (1 / self.draws + 1 / oracle.size))
        assert abs(f - 0.95) <= 3 * se

    def test_deterministic(self, stream):
        a = weighted_chisq_quantile([3.0, 1.0], [0.95, 0.99], stream)
        b = weighted_chisq_quantile([3.0, 1.0], [0.95, 0.99], stream)
        np.testing.assert_array_equal(a, b)

    def test_sf(self, stream):
        from scipy import stats
        p = weighted_chisq_sf(3.841459, [1.0], stream)
        assert abs(p - 0.05) <= 3 * self._prob_se(0.05, self.draws)
        assert abs(stats.chi2.sf(3.841459, 1) - 0.05) < 1e-6

    @pytest.mark.parametrize("w", [[0.0, 0.0], [], [1.0, -0.5]])
    def test_bad_weights(self, w, stream):
        with pytest.raises(ValueError):
            weighted_chisq_quantile(w, 0.95, stream)

    def test_too_few_draws(self, stream):
        with pytest.raises(ValueError):
            weighted_chisq_quantile([1.0], 0.95, stream, draws=500)


def _spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


class TestLinalg:
    def test_pencil_identity(self):
        b = _spd(np.random.default_rng(1), 3)
        np.testing.assert_allclose(pencil_eigvals(b, b), np.ones(3), atol=1e-12)
        np.testing.assert_allclose(pencil_eigvals(2 * b, b), 2 * np.ones(3), atol=1e-12)

    def test_pencil_diagonal(self):
        np.testing.assert_allclose(pencil_eigvals(np.diag([1.0, 3.0]), np.eye(2)), [3.0, 1.0])

    @settings(max_examples=30)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_pencil_brute_force(self, d, seed):
        rng = np.random.default_rng(seed)
        a = _spd(rng, d) - 2 * np.eye(d)
        b = _spd(rng, d)
        brute = np.sort(np.linalg.eigvals(np.linalg.solve(b, a)).real)[::-1]
        np.testing.assert_allclose(pencil_eigvals(a, b), brute, atol=1e-10, rtol=1e-10)

    def test_pencil_not_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            pencil_eigvals(np.eye(2), np.diag([1.0, -1.0]))

    def test_inverse(self):
        np.testing.assert_array_equal(sym_inverse(np.eye(3)), np.eye(3))
        np.testing.assert_allclose(sym_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
        m = _spd(np.random.default_rng(5), 4)
        inv = sym_inverse(m)
        assert np.max(np.abs(m @ inv - np.eye(4))) <= 1e-10 * 4
        np.testing.assert_array_equal(inv, inv.T)

    def test_inverse_not_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            sym_inverse(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_repair_psd(self):
        m = np.diag([1.0, -1e-12])
        out = repair_psd(m)
        assert np.linalg.eigvalsh(out).min() >= 0
        with pytest.raises(NotPositiveDefiniteError):
            repair_psd(np.diag([1.0, -1e-3]))


class TestPartitionedParams:
    def test_blocks(self):
        p = PartitionedParams([1.0, 2.0, 3.0, 4.0], (2, 3))
        np.testing.assert_array_equal(p.gamma, [3.0, 4.0])
        np.testing.assert_array_equal(p.delta, [1.0, 2.0])
        assert (p.d, p.p, p.nuisance_idx) == (4, 2, (0, 1))
        np.testing.assert_array_equal(p.with_gamma([5.0, 6.0]).values, [1, 2, 5, 6])

    @pytest.mark.parametrize("idx", [(), (0, 0), (4,), (0, 1, 2, 3, 4)])
    def test_invalid(self, idx):
        with pytest.raises(ValueError):
            PartitionedParams([1.0, 2.0, 3.0, 4.0], idx)

    def test_immutable(self):
        p = PartitionedParams([1.0, 2.0], (0,))
        with pytest.raises(ValueError):
            p.values[0] = 3.0


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(7, 3).generator().standard_normal(20)
        b = RngStream(7, 3).generator().standard_normal(20)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams(self):
        a = RngStream(7, 3).generator().standard_normal(2000)
        b = RngStream(7, 4).generator().standard_normal(2000)
        c = RngStream(7, 3).child(0).generator().standard_normal(2000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
        assert abs(np.corrcoef(a, c)[0, 1]) < 0.1

    def test_seed_range(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(2**64)
        RngStream(2**64 - 1).generator()

    def test_as_generator(self):
        g = np.random.default_rng(0)
        assert as_generator(g) is g
        with pytest.raises(TypeError):
            as_generator(5)
