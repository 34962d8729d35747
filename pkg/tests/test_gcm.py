import numpy as np
import pytest
from scipy.stats import norm

from rgax.errors import DataError, DegenerateVarianceError
from rgax.gcm import (IntervalSpec, confidence_interval, critical_value, gcm_from_products,
                      gcm_from_residuals, interval_from, non_nil_test)


class TestGcmFromResiduals:
    def test_alternating_products(self):
        r = gcm_from_products([1, -1, 1, -1])
        assert r.mean_estimate == 0.0
        assert r.statistic == 0.0
        assert r.p_two_sided == 1.0

    def test_two_zero_products(self):
        r = gcm_from_products([2, 0, 2, 0])
        assert r.mean_estimate == 1.0
        assert r.sd_products == 1.0
        assert r.statistic == pytest.approx(2.0, abs=1e-15)
        assert r.p_two_sided == pytest.approx(2 * norm.cdf(-2), abs=1e-15)
        assert r.p_two_sided == pytest.approx(0.0455, abs=1e-4)

    def test_constant_products_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            gcm_from_products([0.3] * 5)

    def test_too_short_and_mismatched(self):
        with pytest.raises(DataError):
            gcm_from_residuals([1.0], [1.0])
        with pytest.raises(DataError):
            gcm_from_residuals([1.0, 2.0], [1.0])

    def test_invariants(self):
        rng = np.random.default_rng(1)
        rY, rX = rng.normal(size=200), rng.normal(size=200)
        r = gcm_from_residuals(rY, rX)
        assert r.p_two_sided == 2 * min(r.p_greater, r.p_less)
        assert r.sum_scale_estimate == r.n * r.mean_estimate
        R = rY * rX
        assert r.sd_products == pytest.approx(np.sqrt(np.mean(R**2) - np.mean(R) ** 2))
        assert r.sd_sum == pytest.approx(np.sqrt(200) * r.sd_products)
        assert r.statistic == pytest.approx(np.sqrt(200) * r.mean_estimate / r.sd_products)

    def test_products_are_read_only(self):
        r = gcm_from_products([1.0, 2.0, 4.0])
        with pytest.raises(ValueError):
            r.products[0] = 5.0


class TestProperties:
    def test_scale_equivariance(self):
        rng = np.random.default_rng(2)
        rY, rX = rng.normal(size=100), rng.normal(size=100)
        a, b = gcm_from_residuals(rY, rX), gcm_from_residuals(3.5 * rY, rX)
        assert b.sum_scale_estimate == pytest.approx(3.5 * a.sum_scale_estimate)
        assert b.sd_sum == pytest.approx(3.5 * a.sd_sum)
        assert b.statistic == pytest.approx(a.statistic, rel=1e-12)
        assert b.p_two_sided == pytest.approx(a.p_two_sided, rel=1e-10)

    def test_sign_flip(self):
        rng = np.random.default_rng(3)
        rY, rX = rng.normal(size=50), rng.normal(size=50) + 0.2
        a, b = gcm_from_residuals(rY, rX), gcm_from_residuals(rY, rX, sign_flip=True)
        assert b.sum_scale_estimate == -a.sum_scale_estimate
        assert b.statistic == -a.statistic
        assert b.p_greater == pytest.approx(a.p_less, abs=1e-15)
        assert b.p_less == pytest.approx(a.p_greater, abs=1e-15)

    def test_zero_propensity_is_classical_sum(self):
        rng = np.random.default_rng(4)
        rY = rng.normal(size=80)
        x = (rng.random(80) < 0.3).astype(float)
        r = gcm_from_residuals(rY, x)
        assert r.sum_scale_estimate == pytest.approx(rY[x == 1].sum(), abs=1e-12)

    def test_consistency_oracle(self):
        # discrete law: Z in {0, 1}, known E[Cov(Y, X | Z)]
        rng = np.random.default_rng(5)
        f = np.array([0.3, 0.6])
        mu1, mu0 = np.array([0.7, 0.5]), np.array([0.4, 0.45])
        truth = np.sum(0.5 * f * (1 - f) * (mu1 - mu0))
        h = f * mu1 + (1 - f) * mu0
        n, hits, reps = 2000, 0, 1000
        for _ in range(reps):
            z = rng.integers(0, 2, n)
            x = (rng.random(n) < f[z]).astype(float)
            y = (rng.random(n) < np.where(x == 1, mu1[z], mu0[z])).astype(float)
            r = gcm_from_residuals(y - h[z], x - f[z])
            hits += abs(r.mean_estimate - truth) <= 3 * r.sd_products / np.sqrt(n)
        assert hits / reps >= 0.99


class TestIntervals:
    def test_published_anchor_with_rounded_quantile(self):
        lo, hi = interval_from(9.969451, 2.773443, IntervalSpec(critical_value=1.96))
        assert lo == pytest.approx(4.533501, abs=1e-4)
        assert hi == pytest.approx(15.405400, abs=1e-4)

    def test_exact_quantile_misses_anchor_by_rounding(self):
        # the exact 97.5% quantile is 1.959964, which moves the bounds by 1e-4
        lo, hi = interval_from(9.969451, 2.773443, IntervalSpec())
        assert abs(hi - 15.405400) == pytest.approx(0.036e-3 * 2.773443, rel=0.05)

    def test_lower_one_sided(self):
        lo, hi = interval_from(0.0, 1.0, IntervalSpec(sidedness="lower-one-sided"))
        assert lo == pytest.approx(-1.6449, abs=1e-4)
        assert hi == np.inf

    def test_upper_one_sided(self):
        lo, hi = interval_from(0.0, 1.0, IntervalSpec(sidedness="upper-one-sided"))
        assert lo == -np.inf
        assert hi == pytest.approx(1.6449, abs=1e-4)

    def test_zero_sd_rejected(self):
        with pytest.raises(DegenerateVarianceError):
            interval_from(1.0, 0.0)

    def test_level_validated(self):
        with pytest.raises(DataError):
            IntervalSpec(level=1.0)
        with pytest.raises(DataError):
            IntervalSpec(sidedness="both")

    def test_critical_values(self):
        assert critical_value(IntervalSpec()) == pytest.approx(1.959964, abs=1e-6)
        assert critical_value(IntervalSpec(level=0.9, sidedness="lower-one-sided")) == \
            pytest.approx(norm.ppf(0.9))

    def test_interval_from_result(self):
        r = gcm_from_products([2, 0, 2, 0])
        lo, hi = confidence_interval(r)
        assert (lo + hi) / 2 == pytest.approx(r.sum_scale_estimate)


class TestNonNil:
    def test_zero_shift_reproduces_nil(self):
        r = gcm_from_products([2, 0, 1, 0, 3])
        for d, p in (("greater", r.p_greater), ("less", r.p_less),
                     ("two-sided", r.p_two_sided)):
            assert non_nil_test(r, 0.0, d) == p

    def test_centering(self):
        r = gcm_from_products([2, 0, 1, 0, 3])
        assert non_nil_test(r, r.sum_scale_estimate, "greater") == 0.5

    def test_normal_tail(self):
        class R:
            sum_scale_estimate, sd_sum = 10.0, 2.0

        assert non_nil_test(R, 6.0, "greater") == pytest.approx(norm.cdf(-2.0), abs=1e-15)
        assert non_nil_test(R, 6.0, "greater") == pytest.approx(0.02275, abs=1e-5)

    def test_bad_direction(self):
        r = gcm_from_products([2, 0, 1])
        with pytest.raises(DataError):
            non_nil_test(r, 0.0, "sideways")
