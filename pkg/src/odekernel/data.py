"""Shared container types: observation grids and datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGridError, SchemaError


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times, at least three of them.

    Three points is the minimum for the difference operator to have a
    boundary row, an interior row, and a boundary row.
    """

    times: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.times, dtype=float))
        if arr.ndim != 1:
            raise InvalidGridError("time grid must be one-dimensional")
        if arr.size < 3:
            raise InvalidGridError(f"need at least 3 time points, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise InvalidGridError("time grid contains non-finite values")
        if not np.all(np.diff(arr) > 0):
            raise InvalidGridError("time grid must be strictly increasing")
        object.__setattr__(self, "times", _frozen_array(arr))

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


@dataclass(frozen=True)
class ObservationSet:
    """Observed trajectories on a common grid.

    y is laid out one state per row, shape (m, n).  Optional exogenous
    inputs use the same layout, shape (p, n).
    """

    grid: TimeGrid
    y: np.ndarray
    inputs: np.ndarray | None = field(default=None)

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if y.shape[1] != self.grid.n:
            raise SchemaError(
                f"y has {y.shape[1]} columns but the grid has {self.grid.n} points"
            )
        if not np.all(np.isfinite(y)):
            raise SchemaError("observations contain non-finite values")
        object.__setattr__(self, "y", _frozen_array(y))
        if self.inputs is not None:
            u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
            if u.shape[1] != self.grid.n:
                raise SchemaError("inputs and grid lengths differ")
            if not np.all(np.isfinite(u)):
                raise SchemaError("inputs contain non-finite values")
            object.__setattr__(self, "inputs", _frozen_array(u))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]


def observations(times, y, inputs=None) -> ObservationSet:
    """Convenience constructor from raw arrays."""
    return ObservationSet(TimeGrid(np.asarray(times, dtype=float)), y, inputs)
