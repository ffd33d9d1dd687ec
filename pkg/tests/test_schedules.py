"""Step-size schedules and the optimal server rate."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from areafl.core import ConfigurationError
from areafl.schedules import (Constant, ConstantTheoremTwo, InverseK, TheoremOne, optimal_lambda_s, theorem1_alpha,
                              theorem1_D, theorem2_alpha, theorem2_bound)
from areafl.verify import lambda_grid_gap


class TestD:
    def test_single_local_step(self):
        assert theorem1_D(1.0, 1.0, 1) == pytest.approx(1.0, rel=1e-15)

    def test_two_local_steps(self):
        # candidates 1/3, 1/3, sqrt(32/9 / 1024) ~ 0.0589, cbrt(4/3 / 512) ~ 0.1375
        expected = math.sqrt((2 * 16 / 9) / (64 * 16))
        assert theorem1_D(1.0, 2.0, 2) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.0589, abs=1e-4)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 10), st.floats(1, 100), st.integers(1, 100))
    def test_never_above_first_term(self, mu, ratio, M):
        L = mu * ratio
        assert theorem1_D(mu, L, M) <= 2 / (M * (mu + L))

    @pytest.mark.parametrize("mu, L, M", [(0.0, 1.0, 1), (2.0, 1.0, 1), (1.0, 1.0, 0)])
    def test_rejects_bad_constants(self, mu, L, M):
        with pytest.raises(ConfigurationError):
            theorem1_D(mu, L, M)


class TestDecreasingAlpha:
    def test_starts_at_D(self):
        assert theorem1_alpha(0, 0.3, 2, 0.7, 0.05) == pytest.approx(0.05, rel=1e-15)

    def test_hand_value(self):
        assert theorem1_alpha(48, 1.0, 1, 1.0, 1.0) == pytest.approx(0.5, rel=1e-15)

    def test_asymptote(self):
        k = 10**6
        assert theorem1_alpha(k, 1.0, 1, 1.0, 1.0) * k == pytest.approx(48.0, rel=0.01)
        assert theorem1_alpha(k, 0.5, 2, 0.5, 1.0) * k == pytest.approx(48 / 0.5, rel=0.01)

    def test_vectorized(self):
        ks = np.arange(5)
        np.testing.assert_array_equal(theorem1_alpha(ks, 0.2, 1, 1.0, 0.5),
                                      [theorem1_alpha(k, 0.2, 1, 1.0, 0.5) for k in ks])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 5), st.floats(1, 50), st.integers(1, 50), st.floats(0.001, 1))
    def test_decreasing_bounded_and_beta(self, mu, ratio, M, p):
        sched = TheoremOne.from_constants(mu, mu * ratio, M, p)
        a = theorem1_alpha(np.arange(0, 10**6 + 1, 997), p, M, sched.gamma, sched.D)
        assert np.all(np.diff(a) < 0)
        assert np.all(a <= sched.D * (1 + 1e-15))
        assert np.all(1 - a * M * sched.gamma / 4 >= 0.5)


class TestBudgetedAlpha:
    def test_hand_value(self):
        a = theorem2_alpha(10, 0.5, 0.25, 0.0, math.sqrt(2), 1, 1.0)
        assert a == pytest.approx(math.sqrt(2.5 / 20), rel=1e-14)
        assert a == pytest.approx(0.35355, abs=1e-5)

    def test_doubling_K(self):
        args = (0.2, 5.0, 1.0, 1.0, 3, 2.0)
        assert theorem2_alpha(2000, *args) == pytest.approx(theorem2_alpha(1000, *args) / math.sqrt(2), rel=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 10**7), st.floats(0.01, 1), st.floats(1, 100), st.floats(0, 5), st.floats(0.1, 5),
           st.integers(1, 50), st.floats(0.01, 100))
    def test_algebraic_inverse(self, K, ps, q, s, B, M, d0):
        a = theorem2_alpha(K, ps, q, s, B, M, d0)
        assert a * a * (s * s + (M + 1) * B * B / 2) * M * K == pytest.approx((1 / ps + 2 * q) * d0, rel=1e-12)

    def test_bound_is_positive(self):
        assert theorem2_bound(100, 0.2, 5.0, 0.0, 1.0, 1, 25.0) > 0

    def test_needs_iterations(self):
        with pytest.raises(ConfigurationError):
            theorem2_alpha(0, 0.2, 5.0, 0.0, 1.0, 1, 1.0)


class TestOptimalServerRate:
    @pytest.mark.parametrize("lam, expected", [((1.0, 1.0), 1.0), ((1.0, 4.0), 2.0)])
    def test_hand_values(self, lam, expected):
        assert optimal_lambda_s(lam) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("n, c", [(1, 3.0), (16, 10.0), (128, 0.5)])
    def test_equal_rates(self, n, c):
        assert optimal_lambda_s(np.full(n, c)) == pytest.approx(c * math.sqrt(n / 2), rel=1e-14)

    def test_grid_minimum(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert lambda_grid_gap(np.exp(rng.uniform(math.log(0.1), math.log(10), 16))) <= 1.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigurationError):
            optimal_lambda_s([1.0, 0.0])


class TestScheduleObjects:
    def test_constant(self):
        assert Constant(0.3)(0) == Constant(0.3)(10**9) == 0.3
        with pytest.raises(ConfigurationError):
            Constant(0.0)

    def test_inverse_k(self):
        assert InverseK(2.0)(0) == 2.0
        assert InverseK(2.0)(3) == 0.5

    def test_budgeted_constant_object(self):
        s = ConstantTheoremTwo.from_constants(100, 0.2, 5.0, 0.0, 1.0, 1, 25.0)
        assert s(0) == s(99) == pytest.approx(theorem2_alpha(100, 0.2, 5.0, 0.0, 1.0, 1, 25.0))
        assert s.K == 100
