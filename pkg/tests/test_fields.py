import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from t2flow.fields import (
    FIELD_NAMES,
    FieldState,
    PeriodicGrid,
    UsageError,
    deriv_theta,
    mean,
    spectral_filter,
    weighted_mean,
)
from t2flow.diagnostics import energy_density, energy_suite

from conftest import random_state


def sin_error(n):
    grid = PeriodicGrid(n)
    th = grid.theta
    return np.max(np.abs(deriv_theta(np.sin(2 * np.pi * th), grid) - 2 * np.pi * np.cos(2 * np.pi * th)))


class TestPeriodicGrid:
    def test_spacing_times_n_is_one(self):
        for n in (16, 64, 256, 1024):
            g = PeriodicGrid(n)
            assert g.spacing * g.n_points == 1.0
            assert g.theta[0] == 0.0 and g.theta.size == n

    @pytest.mark.parametrize("n", [0, 8, 15, 17, 63, -64, 32.0])
    def test_rejects_bad_sizes(self, n):
        with pytest.raises(UsageError):
            PeriodicGrid(n)


class TestDerivTheta:
    def test_constant_gives_exact_zero(self, grid64):
        out = deriv_theta(np.full(64, 3.7), grid64)
        assert np.all(out == 0.0)

    def test_sine_at_64(self):
        assert sin_error(64) < 1e-4

    def test_doubling_shrinks_error_sixteenfold(self):
        ratio = sin_error(64) / sin_error(128)
        assert 16 * 0.8 <= ratio <= 16 * 1.2

    def test_observed_order_three_levels(self):
        # smooth non-trigonometric test function
        def f(th):
            return np.exp(np.sin(2 * np.pi * th))

        def df(th):
            return 2 * np.pi * np.cos(2 * np.pi * th) * f(th)

        errs = []
        for n in (32, 64, 128):
            g = PeriodicGrid(n)
            errs.append(np.max(np.abs(deriv_theta(f(g.theta), g) - df(g.theta))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(np.abs(orders - 4.0) <= 0.3), orders

    def test_stencil_by_hand(self):
        g = PeriodicGrid(16)
        f = np.zeros(16)
        f[0] = 1.0
        d = deriv_theta(f, g)
        h12 = 12.0 / 16
        # f[j+1] picks +8 at j=15, f[j+2] picks -1 at j=14, f[j-1] -8 at j=1, f[j-2] +1 at j=2
        expected = np.zeros(16)
        expected[15], expected[14], expected[1], expected[2] = 8 / h12, -1 / h12, -8 / h12, 1 / h12
        np.testing.assert_allclose(d, expected, rtol=0, atol=1e-14)

    def test_length_mismatch(self, grid64):
        with pytest.raises(UsageError):
            deriv_theta(np.zeros(63), grid64)
        with pytest.raises(UsageError):
            deriv_theta(np.zeros((64, 2)), grid64)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 32, elements=st.floats(-1e3, 1e3)))
    def test_sum_of_derivative_vanishes(self, f):
        d = deriv_theta(f, PeriodicGrid(32))
        assert abs(np.sum(d)) <= 1e-12 * (np.sum(np.abs(d)) + 1.0)


class TestMeans:
    def test_examples(self, grid64):
        assert mean(np.ones(64)) == 1.0
        assert mean(np.full(64, 2.0)) == 2.0
        assert abs(mean(np.sin(2 * np.pi * grid64.theta))) < 1e-15

    def test_empty(self):
        with pytest.raises(UsageError):
            mean(np.array([]))

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, 16, elements=st.floats(-100, 100)),
        arrays(np.float64, 16, elements=st.floats(-100, 100)),
        st.floats(-10, 10),
        st.floats(-10, 10),
    )
    def test_linearity(self, f, g, a, b):
        lhs = mean(a * f + b * g)
        rhs = a * mean(f) + b * mean(g)
        assert abs(lhs - rhs) <= 1e-12 * (abs(a) * np.max(np.abs(f)) + abs(b) * np.max(np.abs(g)) + 1.0)

    def test_weighted_examples(self, rng):
        w = rng.uniform(0.5, 2.0, 32)
        assert weighted_mean(np.ones(32), np.ones(32)) == 1.0
        assert weighted_mean(np.full(32, 2.5), w) == pytest.approx(2.5 * mean(w), rel=1e-15)

    def test_weighted_mean_of_j_is_energy(self, rng):
        for _ in range(5):
            s = random_state(rng)
            lhs = weighted_mean(energy_density(s), np.exp(s.rho - 2 * s.tau))
            assert lhs == pytest.approx(energy_suite(s).energy, rel=1e-14)

    def test_weighted_length_mismatch(self):
        with pytest.raises(UsageError):
            weighted_mean(np.ones(4), np.ones(5))


class TestSpectralFilter:
    def test_keeps_low_modes_and_mean(self):
        g = PeriodicGrid(48)
        low = 1.5 + np.cos(2 * np.pi * 3 * g.theta)
        high = np.cos(2 * np.pi * 20 * g.theta)
        np.testing.assert_allclose(spectral_filter(low + high), low, atol=1e-13)


class TestFieldState:
    def test_immutable_arrays(self, rng):
        s = random_state(rng)
        with pytest.raises(ValueError):
            s.v[0] = 1.0

    def test_copies_inputs(self):
        v = np.zeros(16)
        s = FieldState(0.0, v, v, v, v, v, v)
        v[0] = 5.0
        assert s.v[0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            FieldState(0.0, np.zeros(16), np.zeros(16), np.zeros(16), np.zeros(16), np.zeros(16), np.zeros(18))

    def test_nonfinite_rejected(self):
        bad = np.zeros(16)
        bad[3] = np.nan
        with pytest.raises(UsageError):
            FieldState(0.0, bad, np.zeros(16), np.zeros(16), np.zeros(16), np.zeros(16), np.zeros(16))
        with pytest.raises(UsageError):
            FieldState(math.inf, *[np.zeros(16)] * 6)

    def test_twist_flag(self):
        with pytest.raises(UsageError):
            FieldState(0.0, *[np.zeros(16)] * 6, twist=2)

    def test_momentum_conversion(self, rng):
        s = random_state(rng)
        np.testing.assert_allclose(s.v_tau * np.exp(s.rho), s.pi_v, rtol=1e-14)
        np.testing.assert_allclose(s.q_tau * np.exp(s.rho + 2 * (s.v - s.tau)), s.pi_q, rtol=1e-14)

    def test_stack_round_trip(self, rng):
        s = random_state(rng)
        y = s.stacked()
        assert y.shape == (6, 64)
        t = FieldState.from_stacked(s.tau, y, s.twist)
        for name in FIELD_NAMES:
            assert np.array_equal(getattr(s, name), getattr(t, name))
        assert t.grid == s.grid
