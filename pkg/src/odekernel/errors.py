"""Exception types shared across the package.

Every failure mode that callers are expected to catch gets its own class so
the CLI can map them onto distinct exit codes.
"""

from __future__ import annotations


class OdeKernelError(Exception):
    """Base class for all package-specific errors."""


class InvalidGridError(OdeKernelError):
    """Time grid is too short, unsorted, or contains non-finite entries."""


class InvalidParameterError(OdeKernelError):
    """Parameter vector violates a precondition (shape, finiteness)."""


class SingularOperatorError(OdeKernelError):
    """Operator matrix is singular or numerically unusable.

    Carries the offending coefficient vector so optimizer diagnostics can
    report where a soft rejection happened.
    """

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = theta


class UnderdeterminedSmootherError(OdeKernelError):
    """Normal matrix of the spline fit is rank deficient at mu = 0."""


class OutOfSpanError(OdeKernelError):
    """Evaluation point lies outside the spline knot span."""


class GradientUnavailableError(OdeKernelError):
    """Numerical gradient is undefined: both sided steps hit +inf."""

    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


class NoFeasibleStartError(OdeKernelError):
    """Every multistart point evaluates to +inf."""


class CovarianceUnavailableError(OdeKernelError):
    """Hessian is singular; lists the parameter directions at fault."""

    def __init__(self, message: str, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions or []


class DivisionGuardError(OdeKernelError):
    """A model forcing term would divide by a near-zero denominator."""


class IntegrationDivergedError(OdeKernelError):
    """RK4 state became non-finite; carries the first bad time."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class SchemaError(OdeKernelError):
    """Dataset or config file violates the documented schema."""


class ConfigError(SchemaError):
    """Config file has unknown keys or ill-typed values."""
