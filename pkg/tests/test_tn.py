import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisect, tn_cdf_quad, tn_cdf_scipy, tn_mean_quad, tn_sample
from tnemos.tn import (
    QuadratureError,
    TruncNormal,
    crps_array,
    crps_numeric,
    quantile_array,
    tn_cdf,
    tn_crps,
    tn_mean,
    tn_median,
    tn_pit,
    tn_quantile,
)


def tn_crps_quadrature(mu, sigma, y):
    upper = max(y, mu, 0.0) + 40.0 * sigma
    return crps_numeric(lambda u: tn_cdf_scipy(mu, sigma, u), y, 0.0, upper)


def tn_crps_mpmath(mu, sigma, y, dps=60):
    """High-precision closed form, independent of the float kernels."""
    with mpmath.workdps(dps):
        mu, sigma, y = mpmath.mpf(mu), mpmath.mpf(sigma), mpmath.mpf(y)
        t = mu / sigma
        z = (y - mu) / sigma
        Phi = lambda x: mpmath.ncdf(x)  # noqa: E731
        phi = lambda x: mpmath.npdf(x)  # noqa: E731
        value = sigma * (
            z * (1 - 2 * Phi(-z) / Phi(t))
            + 2 * phi(z) / Phi(t)
            - Phi(mpmath.sqrt(2) * t) / (mpmath.sqrt(mpmath.pi) * Phi(t) ** 2)
        )
        return float(value)


class TestTruncNormal:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            TruncNormal(0.0, 0.0)
        with pytest.raises(ValueError):
            TruncNormal(0.0, -1.0)

    def test_rejects_nonfinite_location(self):
        with pytest.raises(ValueError):
            TruncNormal(math.nan, 1.0)


class TestCdf:
    def test_below_support(self):
        assert tn_cdf(TruncNormal(0, 1), -0.5) == 0.0

    def test_half_normal_at_one(self):
        value = tn_cdf(TruncNormal(0, 1), 1.0)
        assert value == pytest.approx(tn_cdf_quad(0, 1, 1.0), abs=1e-12)
        assert value == pytest.approx(0.6827, abs=1e-4)

    def test_shifted(self):
        value = tn_cdf(TruncNormal(2, 1), 2.0)
        assert value == pytest.approx(tn_cdf_quad(2, 1, 2.0), abs=1e-12)
        assert value == pytest.approx(0.4884, abs=1e-4)

    def test_nonfinite_point_raises(self):
        with pytest.raises(ValueError):
            tn_cdf(TruncNormal(0, 1), math.nan)

    @pytest.mark.parametrize("mu,sigma,y", [(-3, 1, 0.4), (-8, 1, 0.05), (-30, 2, 0.1), (4, 0.5, 3.9), (1, 5, 12)])
    def test_matches_quadrature(self, mu, sigma, y):
        assert tn_cdf(TruncNormal(mu, sigma), y) == pytest.approx(tn_cdf_quad(mu, sigma, y), rel=1e-9, abs=1e-14)

    @given(
        st.floats(-20, 20),
        st.floats(0.05, 10),
        st.lists(st.floats(0, 60), min_size=2, max_size=8),
    )
    def test_nondecreasing_and_bounded(self, mu, sigma, ys):
        d = TruncNormal(mu, sigma)
        values = [tn_cdf(d, y) for y in sorted(ys)]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert tn_cdf(d, 0.0) == 0.0


class TestQuantile:
    def test_lower_endpoint(self):
        assert tn_quantile(TruncNormal(0, 1), 0.0) == 0.0

    def test_median_half_normal(self):
        d = TruncNormal(0, 1)
        oracle = bisect(lambda q: tn_cdf_scipy(0, 1, q) - 0.5, 0.0, 10.0)
        assert tn_quantile(d, 0.5) == pytest.approx(oracle, abs=1e-10)
        assert tn_quantile(d, 0.5) == pytest.approx(0.6745, abs=1e-4)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5, math.nan])
    def test_out_of_range(self, p):
        with pytest.raises(ValueError):
            tn_quantile(TruncNormal(0, 1), p)

    @pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    def test_roundtrip_grid(self, p):
        d = TruncNormal(0, 1)
        assert tn_cdf(d, tn_quantile(d, p)) == pytest.approx(p, abs=1e-9)

    @pytest.mark.parametrize("mu,sigma", [(-3, 1), (-10, 1), (-50, 3), (0.5, 2), (8, 0.3)])
    @pytest.mark.parametrize("p", [0.001, 0.05, 0.5, 0.95, 0.999])
    def test_matches_bisection(self, mu, sigma, p):
        hi = max(mu, 0) + 40 * sigma
        oracle = bisect(lambda q: tn_cdf_quad(mu, sigma, q) - p, 0.0, hi, tol=1e-15)
        assert tn_quantile(TruncNormal(mu, sigma), p) == pytest.approx(oracle, rel=1e-8, abs=1e-12)

    @settings(max_examples=200)
    @given(st.floats(-40, 40), st.floats(0.01, 20), st.floats(0.001, 0.999))
    def test_roundtrip_property(self, mu, sigma, p):
        d = TruncNormal(mu, sigma)
        q = tn_quantile(d, p)
        assert q >= 0.0
        assert tn_cdf(d, q) == pytest.approx(p, abs=1e-9)

    def test_vectorised_matches_scalar(self):
        mu = np.array([-9.0, -1.0, 0.0, 3.0])
        sigma = np.array([1.0, 0.5, 2.0, 1.0])
        got = quantile_array(mu, sigma, 0.3)
        want = [tn_quantile(TruncNormal(m, s), 0.3) for m, s in zip(mu, sigma)]
        np.testing.assert_array_equal(got, want)


class TestPit:
    def test_median_gives_half(self):
        d = TruncNormal(1.2, 0.7)
        assert tn_pit(d, tn_quantile(d, 0.5)) == pytest.approx(0.5, abs=1e-12)

    def test_zero(self):
        assert tn_pit(TruncNormal(1.0, 1.0), 0.0) == 0.0

    def test_negative_obs(self):
        with pytest.raises(ValueError):
            tn_pit(TruncNormal(1.0, 1.0), -0.1)

    def test_self_sampled_uniform(self):
        from scipy import stats

        rng = np.random.default_rng(42)
        d = TruncNormal(0.5, 1.5)
        obs = tn_sample(d.mu, d.sigma, 100_000, rng)
        pit = np.array(d.cdf(obs))
        assert stats.kstest(pit, "uniform").statistic < 0.01


class TestMoments:
    def test_half_normal_mean(self):
        assert tn_mean(TruncNormal(0, 1)) == pytest.approx(tn_mean_quad(0, 1), abs=1e-10)
        assert tn_mean(TruncNormal(0, 1)) == pytest.approx(0.7979, abs=1e-4)

    def test_negligible_truncation(self):
        assert tn_mean(TruncNormal(10, 1)) == pytest.approx(10.0, abs=1e-6)
        assert tn_mean(TruncNormal(10, 1)) == pytest.approx(tn_mean_quad(10, 1), abs=1e-10)

    @pytest.mark.parametrize("mu,sigma", [(-3, 1), (-12, 2), (2, 3)])
    def test_mean_matches_quadrature(self, mu, sigma):
        assert tn_mean(TruncNormal(mu, sigma)) == pytest.approx(tn_mean_quad(mu, sigma), rel=1e-8)

    def test_median(self):
        assert tn_median(TruncNormal(0, 1)) == pytest.approx(0.6745, abs=1e-4)

    @given(st.floats(-30, 30), st.floats(0.01, 10))
    def test_nonnegative(self, mu, sigma):
        d = TruncNormal(mu, sigma)
        assert tn_mean(d) >= 0.0
        assert tn_median(d) >= 0.0


class TestCrps:
    def test_point_mass(self):
        assert tn_crps(TruncNormal(2.0, 1e-9), 2.0) <= 1e-8

    def test_standard_half_normal(self):
        assert tn_crps(TruncNormal(0, 1), 1.0) == pytest.approx(tn_crps_quadrature(0, 1, 1.0), abs=1e-6)

    def test_untruncated_limit(self):
        assert tn_crps(TruncNormal(5, 1), 5.0) == pytest.approx((math.sqrt(2) - 1) / math.sqrt(math.pi), abs=1e-3)
        assert tn_crps(TruncNormal(5, 1), 5.0) == pytest.approx(tn_crps_quadrature(5, 1, 5.0), abs=1e-6)

    def test_negative_obs(self):
        with pytest.raises(ValueError):
            tn_crps(TruncNormal(0, 1), -1.0)

    @pytest.mark.parametrize("t", [-6.5, -10, -40, -200, -1000])
    @pytest.mark.parametrize("w", [0.0, 1e-3, 0.5])
    def test_heavy_truncation_against_mpmath(self, t, w):
        sigma = 1.3
        mu, y = t * sigma, w * sigma
        want = tn_crps_mpmath(mu, sigma, y)
        assert tn_crps(TruncNormal(mu, sigma), y) == pytest.approx(want, rel=1e-8)

    @pytest.mark.parametrize("t", [-5.9, -3, 0, 2.5, 30])
    def test_moderate_against_mpmath(self, t):
        for y in (0.0, 0.3, 2.0, 9.0):
            assert tn_crps(TruncNormal(t, 1.0), y) == pytest.approx(tn_crps_mpmath(t, 1.0, y), rel=1e-10, abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-4, 6), st.floats(0.1, 5), st.floats(0, 4))
    def test_matches_quadrature_property(self, t, sigma, k):
        mu = t * sigma
        y = k * sigma
        assert tn_crps(TruncNormal(mu, sigma), y) == pytest.approx(tn_crps_quadrature(mu, sigma, y), abs=1e-6)

    def test_grows_in_tails(self):
        d = TruncNormal(3.0, 1.0)
        ys = np.linspace(3.0, 60.0, 200)
        scores = crps_array(d.mu, d.sigma, ys)
        assert np.all(np.diff(scores) > 0)
        assert scores[-1] > 50
        near_median = min(crps_array(d.mu, d.sigma, np.linspace(0, 10, 2001)))
        assert near_median == pytest.approx(tn_crps(d, tn_median(d)), abs=1e-4)

    @given(st.floats(-50, 50), st.floats(1e-3, 20), st.floats(0, 100))
    def test_nonnegative_finite(self, mu, sigma, y):
        score = tn_crps(TruncNormal(mu, sigma), y)
        assert math.isfinite(score) and score >= 0.0


class TestCrpsNumeric:
    def test_two_member_step(self):
        cdf = lambda u: 0.0 if u < 0 else (0.5 if u < 2 else 1.0)  # noqa: E731
        assert crps_numeric(cdf, 1.0, 0.0, 2.0, breakpoints=[2.0]) == pytest.approx(0.5, rel=1e-10)

    def test_point_mass(self):
        cdf = lambda u: 1.0 if u >= 3.0 else 0.0  # noqa: E731
        assert crps_numeric(cdf, 3.0, 0.0, 6.0) == pytest.approx(0.0, abs=1e-14)

    def test_obs_outside_bounds(self):
        with pytest.raises(ValueError):
            crps_numeric(lambda u: 0.0, 5.0, 0.0, 1.0)

    def test_nonconvergent_quadrature_reports(self):
        wild = lambda u: 0.5 + 0.5 * math.sin(1e6 * u)  # noqa: E731
        with pytest.raises(QuadratureError):
            crps_numeric(wild, 0.5, 0.0, 1.0)
