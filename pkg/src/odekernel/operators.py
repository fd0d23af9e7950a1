"""Discrete differential operators on an observation grid.

The first-order difference matrix D uses a one-sided stencil on each
boundary row and a centered stencil on interior rows.  Two interior
weightings are available:

    "halved" (default):  (Dx)_i = (2 (t_{i+1} - t_{i-1}))^-1 (x_{i+1} - x_{i-1})
    "central":           (Dx)_i = (t_{i+1} - t_{i-1})^-1 (x_{i+1} - x_{i-1})

The halved variant returns half the derivative of a smooth function on
interior rows; it is deliberate and pinned by tests.  The central variant
is the standard second-order stencil and is what the estimation pipeline
uses, because parameter estimates inherit the derivative scale of D.
Boundary rows are one-sided in both variants:

    (Dx)_1 = (t_2 - t_1)^-1 (x_2 - x_1)
    (Dx)_n = (t_n - t_{n-1})^-1 (x_n - x_{n-1})

A polynomial operator P = sum_k theta_k D^(k-1) (with D^0 = I) is factorized
once and reused; its Gram matrix P^T P plays the role of an inverse kernel
and is therefore never inverted explicitly anywhere in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve

from .data import TimeGrid
from .errors import InvalidParameterError, SingularOperatorError

# Factorizations with 1-norm condition estimates above this are rejected.
CONDITION_CAP = 1e12

# Smallest acceptable relative residual margin for solve_operator checks.
SOLVE_RESIDUAL_RTOL = 1e-10


INTERIOR_STENCILS = ("halved", "central")


@dataclass(frozen=True)
class DifferenceOperator:
    """First-order difference matrix bound to its grid."""

    grid: TimeGrid
    matrix: np.ndarray
    interior: str = "halved"

    @property
    def n(self) -> int:
        return self.grid.n


@dataclass(frozen=True)
class OperatorMatrix:
    """Polynomial operator with a reusable LU factorization.

    rcond is the LAPACK 1-norm reciprocal condition estimate; construction
    fails when 1/rcond exceeds CONDITION_CAP, so a live instance is always
    safely solvable.
    """

    theta: np.ndarray
    matrix: np.ndarray
    lu: tuple
    rcond: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class KernelInverse:
    """Symmetrized Gram matrix P^T P of an operator."""

    gram: np.ndarray


def build_difference_operator(
    grid: TimeGrid | np.ndarray, interior: str = "halved"
) -> DifferenceOperator:
    """Assemble the n x n first-order difference matrix for a grid.

    interior picks the weighting of interior rows; see module docstring.
    """
    if interior not in INTERIOR_STENCILS:
        raise InvalidParameterError(
            f"unknown interior stencil {interior!r}; expected one of "
            f"{', '.join(INTERIOR_STENCILS)}"
        )
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(np.asarray(grid, dtype=float))
    t = grid.times
    n = grid.n
    scale = 2.0 if interior == "halved" else 1.0
    D = np.zeros((n, n))
    D[0, 0] = -1.0 / (t[1] - t[0])
    D[0, 1] = 1.0 / (t[1] - t[0])
    for i in range(1, n - 1):
        w = 1.0 / (scale * (t[i + 1] - t[i - 1]))
        D[i, i - 1] = -w
        D[i, i + 1] = w
    D[n - 1, n - 2] = -1.0 / (t[n - 1] - t[n - 2])
    D[n - 1, n - 1] = 1.0 / (t[n - 1] - t[n - 2])
    D.flags.writeable = False
    return DifferenceOperator(grid=grid, matrix=D, interior=interior)


def build_operator_matrix(
    theta,
    diff: DifferenceOperator,
    cond_cap: float = CONDITION_CAP,
) -> OperatorMatrix:
    """Form P = sum_k theta_k D^(k-1) and factorize it.

    Raises SingularOperatorError when the 1-norm condition estimate of P
    exceeds cond_cap (exactly singular matrices report rcond 0).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim != 1 or theta.size < 1:
        raise InvalidParameterError("theta must be a non-empty vector")
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError("theta contains non-finite values")
    n = diff.n
    P = theta[0] * np.eye(n)
    if theta.size > 1:
        power = diff.matrix
        P = P + theta[1] * power
        for k in range(2, theta.size):
            power = power @ diff.matrix
            P = P + theta[k] * power

    anorm = np.linalg.norm(P, 1)
    if anorm == 0.0:
        raise SingularOperatorError("operator matrix is identically zero", theta=theta)
    try:
        with warnings.catch_warnings():
            # exact singularity is an expected soft-rejection path
            warnings.simplefilter("ignore", LinAlgWarning)
            lu = lu_factor(P, check_finite=False)
    except Exception as exc:  # LAPACK failures surface as our error type
        raise SingularOperatorError(f"factorization failed: {exc}", theta=theta)
    (gecon,) = get_lapack_funcs(("gecon",), (P,))
    rcond, info = gecon(lu[0], anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond <= 1.0 / cond_cap:
        raise SingularOperatorError(
            f"operator condition estimate {np.inf if rcond == 0 else 1.0 / rcond:.3e} "
            f"exceeds cap {cond_cap:.1e} for theta={theta}",
            theta=theta,
        )
    P = P.copy()
    P.flags.writeable = False
    return OperatorMatrix(theta=theta, matrix=P, lu=lu, rcond=float(rcond))


def kernel_inverse(op: OperatorMatrix) -> KernelInverse:
    """Gram matrix P^T P, symmetrized to kill round-off asymmetry."""
    G = op.matrix.T @ op.matrix
    G = 0.5 * (G + G.T)
    G.flags.writeable = False
    return KernelInverse(gram=G)


def solve_operator(op: OperatorMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve P z = rhs using the stored factorization."""
    rhs = np.asarray(rhs, dtype=float)
    return lu_solve(op.lu, rhs, check_finite=False)
