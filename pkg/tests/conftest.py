import numpy as np
import pytest

from odekernel.data import TimeGrid
from odekernel.operators import build_difference_operator, build_operator_matrix


def random_grid(rng, n, t0=0.0, span=2.0):
    """Strictly increasing grid with spacing bounded away from zero."""
    gaps = rng.uniform(0.2, 1.0, size=n - 1)
    t = t0 + span * np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum()
    return TimeGrid(t)


def random_operator(rng, n, cond_limit=1e5, max_tries=50):
    """First-order polynomial operator with a controlled condition number."""
    grid = random_grid(rng, n)
    D = build_difference_operator(grid)
    for _ in range(max_tries):
        a = rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0])
        op = build_operator_matrix(np.array([a, 1.0]), D)
        if 1.0 / op.rcond < cond_limit:
            return grid, D, op
    raise RuntimeError("could not draw a well-conditioned operator")


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
