import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepnet.numerics import (DEFAULT_SPEC, Histogram, QuadratureError,
                               QuadratureSpec, compensated_sum,
                               exp_integral_e1, integrate_adaptive,
                               integrate_panel_doubling,
                               integrate_semi_infinite, trunc_exp_nfold_pdf,
                               trunc_exp_pdf)

from conftest import assert_close, rng_for_test


class TestIntegrateAdaptive:
    def test_polynomial_exact(self):
        # antiderivative of 3x^2 + 2x is x^3 + x^2
        value = integrate_adaptive(lambda x: 3 * x ** 2 + 2 * x, 0.0, 2.0)
        assert_close(value, 12.0, rel=1e-12, label="cubic antiderivative")

    def test_exponential(self):
        value = integrate_adaptive(np.exp, 0.0, 1.0)
        assert_close(value, math.e - 1.0, abs_tol=1e-9, label="exp integral")

    def test_split_points_handle_kink(self):
        f = lambda x: np.abs(x - 0.3)
        exact = 0.5 * 0.3 ** 2 + 0.5 * 0.7 ** 2
        value = integrate_adaptive(f, 0.0, 1.0, split_points=[0.3])
        assert_close(value, exact, rel=1e-12, label="kinked integrand")

    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            integrate_adaptive(np.exp, 1.0, 1.0)

    def test_nonconvergence_raises_with_estimate(self):
        spec = QuadratureSpec(abs_tol=1e-300, rel_tol=1e-300,
                              max_subdivisions=4)
        rng = rng_for_test(0)
        noise = rng.normal(size=257)

        def rough(x):
            return np.interp(x, np.linspace(0, 1, 257), noise)

        with pytest.raises(QuadratureError) as exc_info:
            integrate_adaptive(rough, 0.0, 1.0, spec)
        assert math.isfinite(exc_info.value.estimate)


class TestIntegratePanelDoubling:
    def test_smooth_integral(self):
        value = integrate_panel_doubling(
            lambda x: np.sin(x), 0.0, math.pi,
            abs_tol=1e-12, rel_tol=1e-12)
        assert_close(value, 2.0, rel=1e-10, label="sine arch")

    def test_noise_plateau_still_returns(self):
        rng = rng_for_test(1)

        def noisy(x):
            x = np.asarray(x)
            jitter = rng.normal(scale=1e-13, size=x.shape)
            return np.exp(-x) + jitter

        value = integrate_panel_doubling(noisy, 0.0, 5.0,
                                         abs_tol=1e-15, rel_tol=1e-15)
        assert_close(value, -math.expm1(-5.0), rel=1e-9,
                     label="noisy exponential")


class TestSemiInfinite:
    def test_exponential_tail(self):
        value = integrate_semi_infinite(lambda x: np.exp(-x), 0.0)
        assert_close(value, 1.0, rel=1e-9, label="unit exponential mass")

    def test_shifted_gaussian(self):
        value = integrate_semi_infinite(
            lambda x: np.exp(-0.5 * x ** 2) / math.sqrt(2 * math.pi), 0.0)
        assert_close(value, 0.5, rel=1e-9, label="half-normal mass")


class TestExpIntegralE1:
    def test_against_defining_integral(self):
        # independent route: E1(z) = int_z^inf exp(-t)/t dt
        spec = QuadratureSpec(abs_tol=1e-18, rel_tol=1e-10)
        for z in (0.05, 0.3, 1.0, 2.5, 8.0, 20.0):
            quad = integrate_semi_infinite(
                lambda t: np.exp(-t) / t, z, spec,
                scale=max(1.0, 1.0 / z))
            assert_close(exp_integral_e1(z), quad, rel=1e-6,
                         label=f"E1({z})")

    def test_recurrence_derivative(self):
        # d/dz E1(z) = -exp(-z)/z, checked by central differences
        for z in (0.5, 2.0, 6.0):
            h = 1e-6 * z
            slope = (exp_integral_e1(z + h) - exp_integral_e1(z - h)) / (2 * h)
            assert_close(slope, -math.exp(-z) / z, rel=1e-7,
                         label=f"E1'({z})")

    def test_bounds(self):
        # e^{-z}/(z+1) < E1(z) < e^{-z}/z for z > 0
        for z in (0.1, 1.0, 5.0, 50.0, 500.0):
            e1 = exp_integral_e1(z)
            assert math.exp(-z) / (z + 1.0) < e1 < math.exp(-z) / z

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            exp_integral_e1(0.0)


class TestCompensatedSum:
    def test_alternating_series_beats_naive(self):
        # sum_k (-1)^k / (k+1) = ln 2; permuted large/small mix
        terms = [(-1.0) ** k / (k + 1) for k in range(10_000)]
        partial = sum(1.0 / (k + 1) for k in range(10_000, 2 * 10_000))
        total, canc = compensated_sum(terms)
        expected = sum(reversed(terms))
        assert_close(total, expected, abs_tol=1e-12, label="alternating sum")
        assert canc > 1.0

    def test_cancellation_index_flags_cancellation(self):
        _, canc_mild = compensated_sum([1.0, 2.0, 3.0])
        _, canc_bad = compensated_sum([1e16, 1.0, -1e16])
        assert canc_mild == pytest.approx(1.0)
        assert canc_bad > 1e15

    def test_empty_and_zero(self):
        assert compensated_sum([]) == (0.0, 1.0)
        assert compensated_sum([0.0, 0.0]) == (0.0, 1.0)

    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6,
                              allow_nan=False), min_size=1, max_size=50),
           st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariance(self, values, rnd):
        base, _ = compensated_sum(values)
        shuffled = list(values)
        rnd.shuffle(shuffled)
        permuted, _ = compensated_sum(shuffled)
        scale = max(sum(abs(v) for v in values), 1e-300)
        assert abs(base - permuted) <= 4 * np.finfo(float).eps * scale


class TestHistogram:
    def test_from_samples_counts(self):
        h = Histogram.from_samples([0.1, 0.2, 0.95, 1.5, -2.0],
                                   lo=0.0, hi=1.0, bin_width=0.5)
        assert h.counts.tolist() == [2, 1]
        assert h.total == 5
        assert h.in_range == 3

    def test_density_normalization(self):
        rng = rng_for_test(2)
        samples = rng.uniform(0.0, 1.0, size=10_000)
        h = Histogram.from_samples(samples, 0.0, 1.0, 0.05)
        mass = float(np.sum(h.density()) * h.bin_width)
        assert_close(mass, 1.0, abs_tol=1e-12, label="in-range density mass")

    def test_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            Histogram.from_samples([0.5], lo=1.0, hi=0.0, bin_width=0.1)


class TestTruncExp:
    def test_pdf_mass_one(self):
        rho, r0 = 0.01, 200.0
        mass = integrate_adaptive(lambda x: trunc_exp_pdf(x, rho, r0),
                                  0.0, r0)
        assert_close(mass, 1.0, rel=1e-10, label="truncated-exp mass")

    def test_pdf_zero_outside(self):
        assert trunc_exp_pdf(np.array([-1.0, 250.0]), 0.01, 200.0).tolist() \
            == [0.0, 0.0]

    def test_nfold_mass_and_support(self):
        # n=2, rho*r0=1: support (0, 2*r0], mass 1
        rho, r0 = 0.005, 200.0
        grid = np.linspace(0.0, 2 * r0, 4097)
        pdf = trunc_exp_nfold_pdf(2, rho, r0, grid)
        mass = float(np.trapezoid(pdf, grid))
        assert_close(mass, 1.0, abs_tol=1e-6, label="2-fold mass")
        assert pdf[0] == 0.0
        assert np.all(pdf >= 0.0)

    def test_nfold_matches_sampling_oracle(self):
        # independent generative check: histogram of sampled sums
        rho, r0, n = 0.01, 200.0, 3
        rng = rng_for_test(3)
        q = -math.expm1(-rho * r0)
        u = rng.uniform(size=(200_000, n))
        samples = np.sum(-np.log1p(-u * q) / rho, axis=1)
        grid = np.linspace(0.0, n * r0, 4097)
        pdf = trunc_exp_nfold_pdf(n, rho, r0, grid)
        h = Histogram.from_samples(samples, 0.0, n * r0, bin_width=25.0)
        cum = np.concatenate(([0.0], np.cumsum(
            0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
        bin_mass = np.diff(np.interp(h.edges, grid, cum))
        expected = bin_mass * h.total
        keep = expected >= 50.0
        z = (h.counts[keep] - expected[keep]) / np.sqrt(expected[keep])
        assert np.mean(np.abs(z) <= 3.0) >= 0.99

    def test_nfold_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            trunc_exp_nfold_pdf(2, 0.01, 200.0, np.linspace(1.0, 100.0, 65))
        with pytest.raises(ValueError):
            trunc_exp_nfold_pdf(2, 0.01, 200.0, np.linspace(0.0, 3200.0, 65))
