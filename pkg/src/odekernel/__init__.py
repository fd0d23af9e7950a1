"""Gradient-matching ODE parameter estimation with difference-operator kernels."""

from .data import ObservationSet, TimeGrid, observations
from .operators import (
    DifferenceOperator,
    KernelInverse,
    OperatorMatrix,
    build_difference_operator,
    build_operator_matrix,
    kernel_inverse,
    solve_operator,
)

__version__ = "0.1.0"

__all__ = [
    "ObservationSet",
    "TimeGrid",
    "observations",
    "DifferenceOperator",
    "KernelInverse",
    "OperatorMatrix",
    "build_difference_operator",
    "build_operator_matrix",
    "kernel_inverse",
    "solve_operator",
    "__version__",
]
