import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from odekernel.data import observations
from odekernel.errors import (
    InvalidParameterError,
    OutOfSpanError,
    UnderdeterminedSmootherError,
)
from odekernel.smoother import (
    basis_equally_spaced,
    basis_from_times,
    eval_surrogate,
    fit_surrogate,
    noise_variance,
    second_difference_penalty,
)


class TestBasis:
    def test_q_counts_interior_knots(self):
        t = np.linspace(0, 1, 10)
        basis = basis_from_times(t, degree=3)
        assert basis.q == 8 + 3 + 1  # 8 interior knots for 10 points

    def test_equally_spaced_q(self):
        basis = basis_equally_spaced(0.0, 1.0, q=15, degree=3)
        assert basis.q == 15
        assert basis.design(np.linspace(0, 1, 7)).shape == (7, 15)

    def test_partition_of_unity(self):
        basis = basis_from_times(np.linspace(0, 2 * np.pi, 20))
        x = np.linspace(0, 2 * np.pi, 113)
        rows = basis.design(x).sum(axis=1)
        assert_allclose(rows, np.ones_like(rows), atol=1e-10)

    def test_design_rejects_out_of_span(self):
        basis = basis_from_times(np.linspace(0, 1, 5))
        with pytest.raises(OutOfSpanError):
            basis.design(np.array([-0.01]))
        with pytest.raises(OutOfSpanError):
            basis.design(np.array([1.01]))

    def test_rejects_degree_zero(self):
        with pytest.raises(InvalidParameterError):
            basis_equally_spaced(0, 1, q=4, degree=0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=5, max_value=40))
    def test_partition_of_unity_random_sizes(self, n):
        t = np.linspace(0.0, 3.0, n)
        basis = basis_from_times(t)
        rows = basis.design(t).sum(axis=1)
        assert np.max(np.abs(rows - 1.0)) <= 1e-10


class TestPenalty:
    def test_second_difference_matrix(self):
        R = second_difference_penalty(4)
        d2 = np.array([[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]])
        assert_allclose(R, d2.T @ d2)

    def test_annihilates_linear_coefficients(self):
        R = second_difference_penalty(8)
        lin = np.arange(8.0)
        assert_allclose(R @ lin, np.zeros(8), atol=1e-12)


class TestFit:
    def test_reproduces_cubic_polynomial(self):
        t = np.linspace(0, 2, 10)
        y = 0.3 * t**3 - t**2 + 2 * t - 1
        basis = basis_equally_spaced(0, 2, q=8)
        s = fit_surrogate(observations(t, y[None, :]), basis, mu=0.0)
        assert_allclose(eval_surrogate(s, t)[0], y, atol=1e-8)

    def test_sine_interpolation_accuracy(self):
        t = np.linspace(0, 2 * np.pi, 100)
        y = np.sin(t)
        s = fit_surrogate(observations(t, y[None, :]), mu=1e-6)
        err = np.max(np.abs(eval_surrogate(s, t)[0] - y))
        assert err <= 1e-4

    def test_scaled_weights_do_not_move_unpenalized_fit(self):
        rng = np.random.default_rng(3)
        t = np.linspace(0, 1, 12)
        y = rng.normal(size=(1, 12))
        basis = basis_equally_spaced(0, 1, q=7)
        obs = observations(t, y)
        s1 = fit_surrogate(obs, basis, weights=np.ones(12), mu=0.0)
        s2 = fit_surrogate(obs, basis, weights=2.0 * np.ones(12), mu=0.0)
        assert_allclose(s1.coef, s2.coef, atol=1e-9)

    def test_underdetermined_without_penalty(self):
        t = np.linspace(0, 1, 10)
        y = np.sin(t)[None, :]
        # knots at the sample points give q = n + 2 > n
        with pytest.raises(UnderdeterminedSmootherError):
            fit_surrogate(observations(t, y), mu=0.0)

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(11)
        t = np.linspace(0, 3, 25)
        y = rng.normal(size=(2, 25))
        obs = observations(t, y)
        s = fit_surrogate(obs, mu=0.5)
        phi = s.basis.design(t)
        R = second_difference_penalty(s.basis.q)
        for j in range(2):
            lhs = (phi.T @ phi + 0.5 * R) @ s.coef[j]
            rhs = phi.T @ y[j]
            assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))

    def test_linearity_in_data(self):
        rng = np.random.default_rng(4)
        t = np.linspace(0, 1, 15)
        y1 = rng.normal(size=15)
        y2 = rng.normal(size=15)
        basis = basis_equally_spaced(0, 1, q=9)
        fit = lambda y: fit_surrogate(observations(t, y[None, :]), basis, mu=0.3).coef[0]
        combo = fit(2.0 * y1 - 0.5 * y2)
        assert_allclose(combo, 2.0 * fit(y1) - 0.5 * fit(y2), atol=1e-9)

    def test_constant_data_reproduced_for_any_mu(self):
        t = np.linspace(0, 1, 12)
        y = np.full((1, 12), 3.25)
        for mu in [0.0, 1.0, 100.0]:
            s = fit_surrogate(observations(t, y), basis_equally_spaced(0, 1, 7), mu=mu)
            assert_allclose(eval_surrogate(s, t)[0], y[0], atol=1e-8)

    def test_roughness_monotone_in_mu(self):
        rng = np.random.default_rng(9)
        t = np.linspace(0, 1, 40)
        y = np.sin(6 * t) + 0.3 * rng.normal(size=40)
        obs = observations(t, y[None, :])
        R = second_difference_penalty(basis_from_times(t).q)
        rough = []
        for mu in [1e-6, 1e-3, 1e-1, 1e1, 1e3]:
            c = fit_surrogate(obs, mu=mu).coef[0]
            rough.append(float(c @ R @ c))
        assert all(a >= b - 1e-12 for a, b in zip(rough, rough[1:]))

    def test_gcv_returns_grid_member(self):
        rng = np.random.default_rng(21)
        t = np.linspace(0, 2, 30)
        y = np.cos(2 * t) + 0.1 * rng.normal(size=30)
        s = fit_surrogate(observations(t, y[None, :]), mu="gcv")
        assert s.mu[0] in {10.0**k for k in range(-6, 3)}

    def test_gcv_tracks_smooth_signal(self):
        t = np.linspace(0, 2 * np.pi, 60)
        y = np.sin(t)
        s = fit_surrogate(observations(t, y[None, :]), mu="gcv")
        err = np.max(np.abs(eval_surrogate(s, t)[0] - y))
        assert err <= 1e-3


class TestEval:
    def test_eval_outside_span_raises(self):
        t = np.linspace(0, 1, 8)
        s = fit_surrogate(observations(t, np.sin(t)[None, :]), mu=1e-4)
        with pytest.raises(OutOfSpanError):
            eval_surrogate(s, np.array([1.5]))

    def test_eval_shape(self):
        t = np.linspace(0, 1, 9)
        y = np.vstack([np.sin(t), np.cos(t)])
        s = fit_surrogate(observations(t, y), mu=1e-4)
        out = eval_surrogate(s, np.linspace(0.1, 0.9, 31))
        assert out.shape == (2, 31)


class TestNoiseVariance:
    def test_recovers_known_sigma(self):
        rng = np.random.default_rng(7)
        t = np.linspace(0, 2 * np.pi, 200)
        sigma = 0.3
        y = np.sin(t) + sigma * rng.normal(size=200)
        s = fit_surrogate(observations(t, y[None, :]), mu="gcv")
        est = noise_variance(observations(t, y[None, :]), s)[0]
        assert 0.6 * sigma**2 <= est <= 1.5 * sigma**2

    def test_shared_pools_states(self):
        rng = np.random.default_rng(8)
        t = np.linspace(0, 1, 50)
        y = np.vstack([np.sin(3 * t), np.cos(3 * t)]) + 0.2 * rng.normal(size=(2, 50))
        obs = observations(t, y)
        s = fit_surrogate(obs, mu="gcv")
        shared = noise_variance(obs, s, shared=True)
        assert shared[0] == shared[1]

    def test_noiseless_floor(self):
        t = np.linspace(0, 1, 30)
        y = (2 * t + 1)[None, :]
        obs = observations(t, y)
        s = fit_surrogate(obs, mu=1e-6)
        est = noise_variance(obs, s)
        assert np.all(est >= 1e-12) and np.all(est <= 1e-6)
