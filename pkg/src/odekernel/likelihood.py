"""Profile objective, state reconstruction, and inference summaries.

The estimation criterion never integrates the ODE and never inverts the
Gram matrix.  For each state j with operator P_j, forcing f_j, noise
variance sigma_j^2 and penalty weight lambda, the transformed data is

    ytil_j = y_j - P_j^-1 f_j

and the minimized profile objective is

    L = sum_j (2 sigma_j^2)^-1 * ytil_j^T [I - (I + sigma_j^2 lambda P_j^T P_j)^-1] ytil_j

computed by solving M_j z = ytil_j with M_j = I + c P_j^T P_j, c =
sigma_j^2 lambda, and accumulating the algebraically equal sum of squares

    (2 sigma_j^2)^-1 * (c ||P_j z||^2 + c^2 ||P_j^T P_j z||^2).

The subtraction form ytil.(ytil - z) is exact in real arithmetic but
cancels catastrophically when ||ytil|| blows up (P nearly singular makes
P^-1 f huge); the square form cannot go negative and stays accurate
there, which matters because optimizers would otherwise chase the fake
negative values.  L equals the negative of the two-block pseudo
log-likelihood profiled over the states, which the test suite checks
against a direct quadratic minimization.

Parameter vectors that make an operator singular, or that trip a model's
forcing guard, evaluate to +inf so minimizers treat them as soft
rejections rather than hard failures.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .data import ObservationSet
from .errors import (
    CovarianceUnavailableError,
    DivisionGuardError,
    InvalidParameterError,
    SingularOperatorError,
)
from .operators import (
    DifferenceOperator,
    OperatorMatrix,
    build_difference_operator,
    build_operator_matrix,
    kernel_inverse,
    solve_operator,
)


def transform_data(y: np.ndarray, op: OperatorMatrix, forcing: np.ndarray) -> np.ndarray:
    """ytil = y - P^-1 f; the zero-forcing case costs nothing."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(forcing, dtype=float)
    if not f.any():
        return y.copy()
    return y - solve_operator(op, f)


def _penalized_gram(op: OperatorMatrix, weight: float) -> np.ndarray:
    M = weight * kernel_inverse(op).gram
    M[np.diag_indices_from(M)] += 1.0
    return M


def equation_term(
    y: np.ndarray,
    op: OperatorMatrix,
    forcing: np.ndarray,
    lam: float,
    sigma2: float,
) -> float:
    """Single-equation contribution to the profile objective.

    With c = sigma2 * lam and z solving (I + c P^T P) z = ytil,

        ytil^T [I - M^-1] ytil = c ||P z||^2 + c^2 ||P^T P z||^2,

    so the value is assembled from squares and cannot go negative.  The
    equivalent subtraction ytil.(ytil - z) loses every significant digit
    when ||ytil|| is huge (P near singular with nonzero forcing) and the
    resulting fake negatives would attract the optimizer.
    """
    ytil = transform_data(y, op, forcing)
    c = sigma2 * lam
    M = _penalized_gram(op, c)
    factor = cho_factor(M, check_finite=False)
    z = cho_solve(factor, ytil, check_finite=False)
    pz = op.matrix @ z
    gz = op.matrix.T @ pz
    return float((c * (pz @ pz) + c * c * (gz @ gz)) / (2.0 * sigma2))


@dataclass(frozen=True)
class ProfileObjectiveContext:
    """Everything the objective needs besides the parameter vector."""

    obs: ObservationSet
    model: "object"  # ModelSpec; kept loose to avoid an import cycle
    lam: float
    sigma2: np.ndarray
    diff: DifferenceOperator = field(default=None)
    surrogate_values: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidParameterError("lambda must be finite and > 0")
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if sigma2.size == 1:
            sigma2 = np.full(self.obs.m, sigma2[0])
        if sigma2.size != self.obs.m:
            raise InvalidParameterError("sigma2 length does not match state count")
        if np.any(sigma2 <= 0) or not np.all(np.isfinite(sigma2)):
            raise InvalidParameterError("sigma2 entries must be finite and > 0")
        object.__setattr__(self, "sigma2", sigma2)
        if self.diff is None:
            object.__setattr__(self, "diff", build_difference_operator(self.obs.grid))
        if self.surrogate_values is None:
            object.__setattr__(self, "surrogate_values", self.obs.y)

    @property
    def m(self) -> int:
        return self.obs.m


# Per-equation memo capacity; covers the base point plus every
# single-coordinate probe pattern a finite-difference sweep generates.
_EQUATION_CACHE_SIZE = 256


def _equation_value(ctx: ProfileObjectiveContext, params: np.ndarray, j: int) -> float:
    try:
        op = build_operator_matrix(ctx.model.operator_coeffs(params, j), ctx.diff)
        f = ctx.model.forcing(
            params, j, ctx.surrogate_values, ctx.obs.times, ctx.obs.inputs
        )
    except (SingularOperatorError, DivisionGuardError):
        return np.inf
    return equation_term(ctx.obs.y[j], op, f, ctx.lam, float(ctx.sigma2[j]))


def profile_objective(ctx: ProfileObjectiveContext, params) -> float:
    """Minimized objective L(theta, beta); +inf on soft rejection."""
    params = np.asarray(params, dtype=float)
    if not np.all(np.isfinite(params)):
        raise InvalidParameterError("parameter vector contains non-finite values")
    total = 0.0
    for j in range(ctx.m):
        value = _equation_value(ctx, params, j)
        if not np.isfinite(value):
            return np.inf
        total += value
    return total


def equation_objective(ctx: ProfileObjectiveContext, equations) -> "callable":
    """Objective restricted to a subset of equations (for block fits).

    The returned callable memoizes each equation's value on the slice of
    the parameter vector that equation depends on, so single-coordinate
    probes (finite-difference gradients and Hessians) only pay for the
    equations the probed coordinate actually touches.
    """
    eqs = tuple(equations)
    slices = [
        np.fromiter(sorted(ctx.model.dependencies[j]), dtype=np.intp) for j in eqs
    ]
    caches = [OrderedDict() for _ in eqs]

    def restricted(params) -> float:
        params = np.asarray(params, dtype=float)
        if not np.all(np.isfinite(params)):
            raise InvalidParameterError("parameter vector contains non-finite values")
        total = 0.0
        for j, idx, cache in zip(eqs, slices, caches):
            key = params[idx].tobytes()
            value = cache.get(key)
            if value is None:
                value = _equation_value(ctx, params, j)
                cache[key] = value
                if len(cache) > _EQUATION_CACHE_SIZE:
                    cache.popitem(last=False)
            if not np.isfinite(value):
                return np.inf
            total += value
        return total

    return restricted


def reconstruct_states(ctx: ProfileObjectiveContext, params) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients alpha_j and fitted states x_j at the optimum.

    Solves (I + lambda sigma_j^2 P^T P) w = ytil, then x = w + P^-1 f and
    alpha = (P^T P) w.  Unlike the objective this propagates singular
    operators as exceptions: reconstruction at an invalid point is a bug.
    """
    params = np.asarray(params, dtype=float)
    alpha = np.empty((ctx.m, ctx.obs.n))
    states = np.empty((ctx.m, ctx.obs.n))
    for j in range(ctx.m):
        op = build_operator_matrix(ctx.model.operator_coeffs(params, j), ctx.diff)
        f = ctx.model.forcing(
            params, j, ctx.surrogate_values, ctx.obs.times, ctx.obs.inputs
        )
        ytil = transform_data(ctx.obs.y[j], op, f)
        gram = kernel_inverse(op).gram
        M = ctx.sigma2[j] * ctx.lam * gram
        M[np.diag_indices_from(M)] += 1.0
        factor = cho_factor(M, check_finite=False)
        w = cho_solve(factor, ytil, check_finite=False)
        particular = solve_operator(op, f) if f.any() else np.zeros_like(ytil)
        states[j] = w + particular
        alpha[j] = gram @ w
    return alpha, states


def effective_df(theta, diff: DifferenceOperator, lam: float, sigma2: float) -> float:
    """tr[(I + lambda sigma2 P^T P)^-1], the per-equation model df."""
    op = build_operator_matrix(theta, diff)
    M = _penalized_gram(op, sigma2 * lam)
    factor = cho_factor(M, check_finite=False)
    inv = cho_solve(factor, np.eye(M.shape[0]), check_finite=False)
    return float(np.trace(inv))


def aic(objective_value: float, dfs) -> float:
    """AIC = -2 * profiled log-likelihood + 2 * total df = 2 L + 2 sum(df)."""
    return 2.0 * float(objective_value) + 2.0 * float(np.sum(dfs))


@dataclass(frozen=True)
class WaldInterval:
    name: str
    estimate: float
    stderr: float | None
    lower: float | None
    upper: float | None
    available: bool


def wald_intervals(
    hessian: np.ndarray,
    estimates: np.ndarray,
    names=None,
    level: float = 0.95,
    singular_rtol: float = 1e-10,
) -> tuple[list[WaldInterval], np.ndarray]:
    """Normal-approximation intervals from the log-likelihood Hessian.

    hessian is the Hessian of the maximized log-likelihood (negative
    definite at an interior optimum); the covariance is its negated
    inverse.  A singular Hessian raises with the offending directions; an
    indefinite one flags only the parameters whose variance estimate is
    negative.
    """
    H = np.asarray(hessian, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    k = estimates.size
    if H.shape != (k, k):
        raise InvalidParameterError("hessian shape does not match estimates")
    if names is None:
        names = [f"p{i}" for i in range(k)]
    A = -0.5 * (H + H.T)
    eigvals, eigvecs = np.linalg.eigh(A)
    scale = np.max(np.abs(eigvals)) if k else 0.0
    if scale == 0.0 or np.any(np.abs(eigvals) <= singular_rtol * scale):
        null = []
        for idx in np.where(np.abs(eigvals) <= singular_rtol * max(scale, 1e-300))[0]:
            dominant = int(np.argmax(np.abs(eigvecs[:, idx])))
            null.append(names[dominant])
        raise CovarianceUnavailableError(
            f"Hessian is singular; null directions involve {null or names}",
            null_directions=null or list(names),
        )
    cov = eigvecs @ np.diag(1.0 / eigvals) @ eigvecs.T
    cov = 0.5 * (cov + cov.T)
    z = float(norm.ppf(0.5 + level / 2.0))
    intervals = []
    for i in range(k):
        var = cov[i, i]
        if var > 0 and np.isfinite(var):
            se = float(np.sqrt(var))
            intervals.append(
                WaldInterval(
                    name=names[i],
                    estimate=float(estimates[i]),
                    stderr=se,
                    lower=float(estimates[i] - z * se),
                    upper=float(estimates[i] + z * se),
                    available=True,
                )
            )
        else:
            intervals.append(
                WaldInterval(
                    name=names[i],
                    estimate=float(estimates[i]),
                    stderr=None,
                    lower=None,
                    upper=None,
                    available=False,
                )
            )
    return intervals, cov


@dataclass(frozen=True)
class FitResult:
    """Everything a fit produces, ready for reporting."""

    model_name: str
    param_names: tuple
    estimates: np.ndarray
    theta: tuple  # operator coefficient vector per equation at the optimum
    alpha: np.ndarray  # (m, n) kernel coefficients
    states: np.ndarray  # (m, n) reconstructed trajectories
    sigma2: np.ndarray
    df: np.ndarray
    objective: float
    aic: float
    lam: float
    wald: tuple | None
    covariance: np.ndarray | None
    converged: bool
    optimization: "object"
    surrogate: "object" = None
    lambda_table: tuple | None = None

    @property
    def initial_conditions(self) -> np.ndarray:
        """Fitted state values at the first grid point."""
        return self.states[:, 0]
