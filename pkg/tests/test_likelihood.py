import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from odekernel.data import observations
from odekernel.errors import CovarianceUnavailableError, InvalidParameterError
from odekernel.likelihood import (
    ProfileObjectiveContext,
    aic,
    effective_df,
    equation_objective,
    equation_term,
    profile_objective,
    reconstruct_states,
    transform_data,
    wald_intervals,
)
from odekernel.operators import (
    build_difference_operator,
    build_operator_matrix,
    kernel_inverse,
    solve_operator,
)

from conftest import random_operator


def dual_route_value(y, op, f, lam, sigma2):
    """Independent oracle: profile the two-block objective over alpha.

    Forms K = (P^T P)^-1 explicitly, solves (K + sigma2 lam I) alpha = ytil,
    and evaluates (2 sigma2)^-1 ||ytil - K alpha||^2 + (lam/2) alpha^T K alpha.
    Test-only code: the production path never inverts the Gram matrix.
    """
    P = op.matrix
    K = np.linalg.inv(P.T @ P)
    K = 0.5 * (K + K.T)
    ytil = y - np.linalg.solve(P, f)
    alpha = np.linalg.solve(K + sigma2 * lam * np.eye(len(y)), ytil)
    resid = ytil - K @ alpha
    return float(resid @ resid / (2.0 * sigma2) + 0.5 * lam * alpha @ K @ alpha)


def state_route_value(y, op, f, lam, sigma2):
    """Second oracle: minimize the data/penalty quadratic over the states."""
    P = op.matrix
    n = len(y)
    A = np.eye(n) + sigma2 * lam * (P.T @ P)
    x = np.linalg.solve(A, y + sigma2 * lam * (P.T @ f))
    return float(
        np.sum((y - x) ** 2) / (2.0 * sigma2)
        + 0.5 * lam * np.sum((P @ x - f) ** 2)
    )


class StubModel:
    """Minimal duck-typed model: fixed operator coefficients and forcing."""

    def __init__(self, thetas, forcings):
        self.thetas = [np.asarray(t, dtype=float) for t in thetas]
        self.forcings = [np.asarray(f, dtype=float) for f in forcings]
        self.dependencies = tuple(frozenset() for _ in thetas)

    def operator_coeffs(self, params, j):
        return self.thetas[j]

    def forcing(self, params, j, surrogate, times, inputs):
        return self.forcings[j]


class ParamStubModel:
    """Single equation, theta = (-p0, 1), zero forcing."""

    def operator_coeffs(self, params, j):
        return np.array([-params[0], 1.0])

    def forcing(self, params, j, surrogate, times, inputs):
        return np.zeros(len(times))


class TestTransform:
    def test_zero_forcing_is_identity(self, rng):
        _, _, op = random_operator(rng, 8)
        y = rng.normal(size=8)
        assert_allclose(transform_data(y, op, np.zeros(8)), y)

    def test_particular_solution_maps_to_zero(self, rng):
        _, _, op = random_operator(rng, 9)
        f = rng.normal(size=9)
        y = solve_operator(op, f)
        assert_allclose(transform_data(y, op, f), np.zeros(9), atol=1e-10)

    def test_affine_in_data(self, rng):
        _, _, op = random_operator(rng, 7)
        y = rng.normal(size=7)
        delta = rng.normal(size=7)
        f = rng.normal(size=7)
        assert_allclose(
            transform_data(y + delta, op, f),
            transform_data(y, op, f) + delta,
            atol=1e-12,
        )

    def test_residual_identity(self, rng):
        _, _, op = random_operator(rng, 10)
        y = rng.normal(size=10)
        f = rng.normal(size=10)
        ytil = transform_data(y, op, f)
        assert_allclose(op.matrix @ (y - ytil), f, atol=1e-9)


class TestStableRoute:
    def test_matches_kernel_form(self, rng):
        # [I - (I + c K^-1)^-1] v == c (K + c I)^-1 v with K = (P^T P)^-1
        for _ in range(10):
            _, _, op = random_operator(rng, 9)
            G = kernel_inverse(op).gram
            K = np.linalg.inv(G)
            v = rng.normal(size=9)
            c = float(rng.uniform(0.01, 10.0))
            lhs = v - np.linalg.solve(np.eye(9) + c * G, v)
            rhs = c * np.linalg.solve(K + c * np.eye(9), v)
            assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-10)


class TestKeystoneEquivalence:
    def test_profile_equals_dual_route_random_instances(self):
        rng = np.random.default_rng(1234)
        for _ in range(30):
            n = int(rng.integers(5, 13))
            _, _, op = random_operator(rng, n)
            y = rng.normal(size=n)
            f = rng.normal(size=n) if rng.random() < 0.7 else np.zeros(n)
            lam = float(10.0 ** rng.uniform(-2, 2))
            sigma2 = float(rng.uniform(0.25, 4.0))
            direct = equation_term(y, op, f, lam, sigma2)
            oracle = dual_route_value(y, op, f, lam, sigma2)
            assert direct == pytest.approx(oracle, rel=1e-8)

    def test_profile_equals_state_route(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            n = int(rng.integers(5, 13))
            _, _, op = random_operator(rng, n)
            y = rng.normal(size=n)
            f = rng.normal(size=n)
            lam = float(10.0 ** rng.uniform(-2, 2))
            sigma2 = float(rng.uniform(0.25, 4.0))
            direct = equation_term(y, op, f, lam, sigma2)
            oracle = state_route_value(y, op, f, lam, sigma2)
            assert direct == pytest.approx(oracle, rel=1e-8)

    def test_near_singular_operator_stays_nonnegative(self):
        # D annihilates constants, so P = D - theta I with tiny theta is
        # near singular while still under the condition cap.  P^-1 f then
        # has a huge constant component and any evaluation that subtracts
        # transformed quantities cancels catastrophically, going negative
        # by orders of magnitude; the state-route oracle never forms P^-1.
        rng = np.random.default_rng(42)
        t = np.linspace(0.0, 30.0, 35)
        D = build_difference_operator(t)
        y = rng.normal(size=35) + 1.0
        f = np.sin(0.5 * t) + 1.5
        for theta in (1e-4, 1e-6, 1e-8):
            op = build_operator_matrix(np.array([-theta, 1.0]), D)
            value = equation_term(y, op, f, 100.0, 0.01)
            assert np.isfinite(value)
            assert value >= 0.0
            oracle = state_route_value(y, op, f, 100.0, 0.01)
            assert value == pytest.approx(oracle, rel=1e-5)

    def test_ten_point_decay_instance_model_path(self):
        # exponential-decay style instance through the context machinery
        rng = np.random.default_rng(5)
        t = np.linspace(0, 2, 10)
        y = -np.exp(-2 * t) + 0.25 * rng.normal(size=10)
        obs = observations(t, y[None, :])
        ctx = ProfileObjectiveContext(
            obs=obs, model=ParamStubModel(), lam=10.0, sigma2=np.array([0.0625])
        )
        value = profile_objective(ctx, np.array([-2.0]))
        D = build_difference_operator(t)
        op = build_operator_matrix([2.0, 1.0], D)
        oracle = dual_route_value(y, op, np.zeros(10), 10.0, 0.0625)
        assert value == pytest.approx(oracle, rel=1e-8)


class TestProfileObjective:
    def test_exact_particular_solution_gives_zero(self, rng):
        _, _, op = random_operator(rng, 8)
        f = rng.normal(size=8)
        y = solve_operator(op, f)
        value = equation_term(y, op, f, 5.0, 1.0)
        assert abs(value) <= 1e-10

    def test_monotone_in_lambda(self, rng):
        _, _, op = random_operator(rng, 10)
        y = rng.normal(size=10)
        f = rng.normal(size=10)
        values = [
            equation_term(y, op, f, lam, 0.5)
            for lam in [1e-3, 1e-1, 1e1, 1e3, 1e5]
        ]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
        assert all(v >= -1e-12 for v in values)

    def test_singular_theta_soft_rejects(self):
        t = np.linspace(0, 2, 6)
        obs = observations(t, np.sin(t)[None, :])
        model = StubModel([[0.0, 1.0]], [np.zeros(6)])
        ctx = ProfileObjectiveContext(obs=obs, model=model, lam=1.0, sigma2=1.0)
        assert profile_objective(ctx, np.zeros(1)) == np.inf

    def test_nonfinite_params_raise(self):
        t = np.linspace(0, 2, 6)
        obs = observations(t, np.sin(t)[None, :])
        ctx = ProfileObjectiveContext(
            obs=obs, model=ParamStubModel(), lam=1.0, sigma2=1.0
        )
        with pytest.raises(InvalidParameterError):
            profile_objective(ctx, np.array([np.nan]))

    def test_invalid_context_rejected(self):
        t = np.linspace(0, 2, 6)
        obs = observations(t, np.sin(t)[None, :])
        with pytest.raises(InvalidParameterError):
            ProfileObjectiveContext(obs=obs, model=ParamStubModel(), lam=-1.0, sigma2=1.0)
        with pytest.raises(InvalidParameterError):
            ProfileObjectiveContext(obs=obs, model=ParamStubModel(), lam=1.0, sigma2=0.0)

    def test_equation_objective_partitions_total(self, rng):
        t = np.linspace(0, 3, 8)
        y = rng.normal(size=(2, 8))
        obs = observations(t, y)
        model = StubModel(
            [[-1.5, 1.0], [0.8, 1.0]], [rng.normal(size=8), rng.normal(size=8)]
        )
        ctx = ProfileObjectiveContext(obs=obs, model=model, lam=2.0, sigma2=[0.5, 1.5])
        total = profile_objective(ctx, np.zeros(1))
        parts = equation_objective(ctx, [0])(np.zeros(1)) + equation_objective(
            ctx, [1]
        )(np.zeros(1))
        assert total == pytest.approx(parts, rel=1e-12)


class TestReconstruction:
    def _ctx(self, rng, n=12, lam=1.0, sigma2=1.0, with_forcing=True):
        t = np.linspace(0, 2, n)
        D = build_difference_operator(t)
        op = build_operator_matrix([2.0, 1.0], D)
        f = rng.normal(size=n) if with_forcing else np.zeros(n)
        x_true = solve_operator(op, f)
        y = x_true + 0.05 * rng.normal(size=n)
        obs = observations(t, y[None, :])
        model = StubModel([[2.0, 1.0]], [f])
        ctx = ProfileObjectiveContext(obs=obs, model=model, lam=lam, sigma2=sigma2)
        return ctx, op, f, y

    def test_large_lambda_forces_operator_consistency(self, rng):
        ctx, op, f, _ = self._ctx(rng, lam=1e8)
        _, states = reconstruct_states(ctx, np.zeros(1))
        resid = np.linalg.norm(op.matrix @ states[0] - f)
        assert resid <= 1e-3 * np.linalg.norm(f)

    def test_small_lambda_returns_data(self, rng):
        ctx, _, _, y = self._ctx(rng, lam=1e-8)
        _, states = reconstruct_states(ctx, np.zeros(1))
        assert np.max(np.abs(states[0] - y)) <= 1e-4

    def test_zero_data_zero_forcing_gives_zero(self):
        t = np.linspace(0, 1, 7)
        obs = observations(t, np.zeros((1, 7)))
        model = StubModel([[1.5, 1.0]], [np.zeros(7)])
        ctx = ProfileObjectiveContext(obs=obs, model=model, lam=1.0, sigma2=1.0)
        alpha, states = reconstruct_states(ctx, np.zeros(1))
        assert_allclose(states, np.zeros((1, 7)))
        assert_allclose(alpha, np.zeros((1, 7)))

    def test_alpha_consistent_with_states(self, rng):
        ctx, op, f, _ = self._ctx(rng, lam=3.0, sigma2=0.7)
        alpha, states = reconstruct_states(ctx, np.zeros(1))
        # x = K alpha + P^-1 f, i.e. (P^T P) (x - P^-1 f) = alpha
        gram = kernel_inverse(op).gram
        w = states[0] - solve_operator(op, f)
        assert_allclose(gram @ w, alpha[0], rtol=1e-8, atol=1e-10)


class TestEffectiveDf:
    def test_three_point_eigenvalue_oracle(self):
        D = build_difference_operator(np.array([0.0, 1.0, 2.0]))
        op = build_operator_matrix([-2.0, 1.0], D)
        mu = np.linalg.eigvalsh(kernel_inverse(op).gram)
        expected = float(np.sum(1.0 / (1.0 + mu)))
        got = effective_df([-2.0, 1.0], D, lam=1.0, sigma2=1.0)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_limits_in_lambda(self):
        D = build_difference_operator(np.linspace(0, 2, 9))
        lo = effective_df([2.0, 1.0], D, lam=1e-12, sigma2=1.0)
        hi = effective_df([2.0, 1.0], D, lam=1e12, sigma2=1.0)
        assert lo == pytest.approx(9.0, abs=1e-6)
        assert hi <= 1e-3

    def test_bounds(self, rng):
        for _ in range(5):
            grid, D, op = random_operator(rng, 8)
            lam = float(10.0 ** rng.uniform(-3, 3))
            df = effective_df(op.theta, D, lam=lam, sigma2=1.0)
            assert 0.0 < df < 8.0 + 1e-9


class TestAic:
    def test_formula(self):
        assert aic(3.0, [1.0, 2.0]) == pytest.approx(12.0)

    def test_perfect_fit_large_lambda_tends_to_zero(self, rng):
        t = np.linspace(0, 2, 10)
        D = build_difference_operator(t)
        op = build_operator_matrix([2.0, 1.0], D)
        f = rng.normal(size=10)
        y = solve_operator(op, f)
        value = equation_term(y, op, f, 1e10, 1.0)
        df = effective_df([2.0, 1.0], D, lam=1e10, sigma2=1.0)
        assert aic(value, [df]) <= 1e-5


class TestWald:
    def test_unit_hessian(self):
        ivs, cov = wald_intervals(-np.eye(2), np.array([1.0, -1.0]))
        assert_allclose(cov, np.eye(2))
        assert ivs[0].stderr == pytest.approx(1.0)
        assert ivs[0].lower == pytest.approx(1.0 - 1.959963985, rel=1e-6)
        assert ivs[0].upper == pytest.approx(1.0 + 1.959963985, rel=1e-6)

    def test_scaled_hessian(self):
        ivs, _ = wald_intervals(np.diag([-4.0, -1.0]), np.zeros(2))
        assert ivs[0].stderr == pytest.approx(0.5)
        assert ivs[1].stderr == pytest.approx(1.0)

    def test_singular_hessian_raises_with_directions(self):
        H = np.diag([-1.0, 0.0])
        with pytest.raises(CovarianceUnavailableError) as err:
            wald_intervals(H, np.zeros(2), names=["a", "b"])
        assert "b" in err.value.null_directions

    def test_indefinite_hessian_flags_parameter(self):
        ivs, _ = wald_intervals(np.diag([-1.0, 2.0]), np.zeros(2), names=["a", "b"])
        assert ivs[0].available and not ivs[1].available
        assert ivs[1].stderr is None and ivs[1].lower is None

    def test_level_controls_width(self):
        at95, _ = wald_intervals(-np.eye(1), np.zeros(1), level=0.95)
        at50, _ = wald_intervals(-np.eye(1), np.zeros(1), level=0.50)
        assert at50[0].upper < at95[0].upper
