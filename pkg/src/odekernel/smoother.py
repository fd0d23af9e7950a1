"""Penalized B-spline surrogates for observed trajectories.

Each state gets an independent ridge-penalized least squares fit

    (Phi^T W Phi + mu * R) c_j = Phi^T W y_j

where Phi is the B-spline design matrix, W an optional diagonal weight
matrix, and R the second-order coefficient difference penalty.  The
surrogate supplies plug-in state values for model forcing terms and a
residual-based noise variance estimate; it is fitted once per dataset and
never updated during optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .data import ObservationSet
from .errors import InvalidParameterError, OutOfSpanError, UnderdeterminedSmootherError

# Default log10 grid for GCV selection of the smoothing weight.
GCV_GRID = tuple(10.0 ** k for k in range(-6, 3))


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis of a given degree on a fixed knot vector.

    knots is the full vector including the degree+1 repeated boundary
    knots, so q = len(knots) - degree - 1 basis functions.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if self.degree < 1:
            raise InvalidParameterError("spline degree must be >= 1")
        if knots.ndim != 1 or knots.size < 2 * (self.degree + 1):
            raise InvalidParameterError("knot vector too short for the degree")
        if not np.all(np.diff(knots) >= 0):
            raise InvalidParameterError("knot vector must be non-decreasing")
        knots = knots.copy()
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def q(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def span(self) -> tuple[float, float]:
        k = self.degree
        return float(self.knots[k]), float(self.knots[-k - 1])

    def design(self, grid) -> np.ndarray:
        """Design matrix Phi with one row per evaluation point."""
        x = np.atleast_1d(np.asarray(grid, dtype=float))
        lo, hi = self.span
        if x.size and (x.min() < lo or x.max() > hi):
            raise OutOfSpanError(
                f"evaluation points outside knot span [{lo:g}, {hi:g}]"
            )
        return BSpline.design_matrix(
            x, self.knots, self.degree, extrapolate=False
        ).toarray()


def basis_from_times(times, degree: int = 3) -> SplineBasis:
    """Basis with knots at the observation times themselves.

    Boundary times are repeated degree+1 times; the interior times become
    interior knots, giving q = (n - 2) + degree + 1 functions.
    """
    t = np.asarray(times, dtype=float)
    full = np.concatenate(
        [np.repeat(t[0], degree + 1), t[1:-1], np.repeat(t[-1], degree + 1)]
    )
    return SplineBasis(degree=degree, knots=full)


def basis_equally_spaced(lo: float, hi: float, q: int, degree: int = 3) -> SplineBasis:
    """Basis with q functions on equally spaced interior knots over [lo, hi]."""
    n_interior = q - degree - 1
    if n_interior < 0:
        raise InvalidParameterError(f"q={q} too small for degree {degree}")
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    full = np.concatenate(
        [np.repeat(lo, degree + 1), interior, np.repeat(hi, degree + 1)]
    )
    return SplineBasis(degree=degree, knots=full)


def second_difference_penalty(q: int) -> np.ndarray:
    """R = Delta2^T Delta2 acting on coefficient vectors of length q."""
    if q < 3:
        return np.zeros((q, q))
    d2 = np.zeros((q - 2, q))
    for i in range(q - 2):
        d2[i, i] = 1.0
        d2[i, i + 1] = -2.0
        d2[i, i + 2] = 1.0
    return d2.T @ d2


@dataclass(frozen=True)
class Surrogate:
    """Fitted spline surrogate for every observed state."""

    basis: SplineBasis
    coef: np.ndarray  # (m, q)
    mu: np.ndarray  # (m,) smoothing weight used per state
    hat_trace: np.ndarray  # (m,) trace of the smoother matrix per state

    @property
    def m(self) -> int:
        return self.coef.shape[0]


def _normal_matrix(phi, weights, mu, penalty):
    if weights is None:
        A = phi.T @ phi
        b_factor = phi.T
    else:
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            A = (phi * w[:, None]).T @ phi
            b_factor = (phi * w[:, None]).T
        else:
            A = phi.T @ w @ phi
            b_factor = phi.T @ w
    if mu > 0:
        A = A + mu * penalty
    return A, b_factor


def fit_surrogate(
    obs: ObservationSet,
    basis: SplineBasis | None = None,
    weights=None,
    mu: float | np.ndarray | str = "gcv",
    gcv_grid=GCV_GRID,
) -> Surrogate:
    """Fit one penalized spline per observed state.

    mu may be a scalar, a per-state vector, or "gcv" to select each
    state's weight by generalized cross-validation over gcv_grid.
    """
    if basis is None:
        basis = basis_from_times(obs.times)
    phi = basis.design(obs.times)
    n, q = phi.shape
    penalty = second_difference_penalty(q)

    if isinstance(mu, str):
        if mu != "gcv":
            raise InvalidParameterError(f"unknown smoothing mode {mu!r}")
        mu_values = np.array(
            [_gcv_select(phi, weights, obs.y[j], penalty, gcv_grid) for j in range(obs.m)]
        )
    else:
        mu_arr = np.atleast_1d(np.asarray(mu, dtype=float))
        if np.any(mu_arr < 0) or not np.all(np.isfinite(mu_arr)):
            raise InvalidParameterError("smoothing weight must be finite and >= 0")
        mu_values = np.full(obs.m, mu_arr[0]) if mu_arr.size == 1 else mu_arr
        if mu_values.size != obs.m:
            raise InvalidParameterError("per-state mu length does not match states")

    coef = np.empty((obs.m, q))
    hat_trace = np.empty(obs.m)
    for j in range(obs.m):
        A, b_factor = _normal_matrix(phi, weights, mu_values[j], penalty)
        if mu_values[j] == 0.0 and (q > n or np.linalg.cond(A) > 1e12):
            raise UnderdeterminedSmootherError(
                "normal matrix is rank deficient; supply mu > 0"
            )
        try:
            factor = cho_factor(A, check_finite=False)
        except Exception:
            raise UnderdeterminedSmootherError(
                "normal matrix is rank deficient; supply mu > 0"
            )
        coef[j] = cho_solve(factor, b_factor @ obs.y[j], check_finite=False)
        # tr(S) = tr(A^-1 Phi^T W Phi) = q - mu * tr(A^-1 R)
        if mu_values[j] > 0:
            hat_trace[j] = q - mu_values[j] * np.trace(
                cho_solve(factor, penalty, check_finite=False)
            )
        else:
            hat_trace[j] = min(n, q)
    return Surrogate(basis=basis, coef=coef, mu=mu_values, hat_trace=hat_trace)


def _gcv_select(phi, weights, y, penalty, grid) -> float:
    n = phi.shape[0]
    best = None
    for mu in grid:
        A, b_factor = _normal_matrix(phi, weights, mu, penalty)
        try:
            factor = cho_factor(A, check_finite=False)
        except Exception:
            continue
        c = cho_solve(factor, b_factor @ y, check_finite=False)
        fitted = phi @ c
        rss = float(np.sum((y - fitted) ** 2))
        tr_s = phi.shape[1] - mu * np.trace(cho_solve(factor, penalty, check_finite=False))
        denom = n - tr_s
        if denom <= 0:
            continue
        score = n * rss / denom**2
        if best is None or score < best[0]:
            best = (score, mu)
    if best is None:
        raise UnderdeterminedSmootherError(
            "GCV failed at every grid point; supply mu explicitly"
        )
    return float(best[1])


def eval_surrogate(surrogate: Surrogate, grid) -> np.ndarray:
    """Surrogate values, one state per row, on an arbitrary grid in span."""
    phi = surrogate.basis.design(grid)
    return surrogate.coef @ phi.T


def noise_variance(
    obs: ObservationSet, surrogate: Surrogate, shared: bool = False, floor: float = 1e-12
) -> np.ndarray:
    """Residual-based variance estimate with df-corrected denominator.

    Per state: sigma2_j = ||y_j - fit_j||^2 / (n - tr(S_j)).  With
    shared=True the residuals and degrees of freedom pool across states.
    The floor keeps downstream objectives defined on noiseless data.
    """
    fitted = eval_surrogate(surrogate, obs.times)
    resid2 = np.sum((obs.y - fitted) ** 2, axis=1)
    dof = obs.n - surrogate.hat_trace
    dof = np.maximum(dof, 1.0)
    if shared:
        pooled = float(resid2.sum() / dof.sum())
        return np.full(obs.m, max(pooled, floor))
    return np.maximum(resid2 / dof, floor)
