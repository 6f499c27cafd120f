"""Uniform time grids shared by policies, solvers, and estimators.

A grid with step ``h`` and ``n_cells`` cells covers [0, n_cells*h].  Cells are
left-closed intervals [k*h, (k+1)*h); everything that is piecewise constant in
time (policies, induced rate kernels) is constant on cells and extended by the
last cell beyond the grid.  Curves are tabulated at the n_cells+1 grid points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TimeGrid"]

# Relative slack when deciding whether a time sits exactly on a grid point.
_SNAP = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    step: float
    n_cells: int

    def __post_init__(self):
        if not (self.step > 0.0):
            raise ValueError("grid step must be positive")
        if self.n_cells < 1:
            raise ValueError("grid needs at least one cell")

    @property
    def horizon(self) -> float:
        return self.step * self.n_cells

    @property
    def n_points(self) -> int:
        return self.n_cells + 1

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_points) * self.step

    def cell_of(self, t: float) -> int:
        """Cell index holding time ``t``; clamps to the last cell beyond the grid.

        Grid points snap to the cell they open: cell_of(k*h) == k (< n_cells).
        """
        if t < 0.0:
            raise ValueError(f"negative time {t}")
        x = t / self.step
        k = int(x)
        # Fix truncation on values that are a whisker below an exact boundary.
        if x - k > 1.0 - _SNAP * max(1.0, x):
            k += 1
        return min(k, self.n_cells - 1)

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to ``t``; raises if ``t`` is off-grid."""
        x = t / self.step
        k = int(round(x))
        if abs(x - k) > _SNAP * max(1.0, abs(x)) or not (0 <= k <= self.n_cells):
            raise ValueError(f"time {t} is not a point of {self}")
        return k

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.step / factor, self.n_cells * factor)

    def __str__(self):
        return f"TimeGrid(h={self.step}, cells={self.n_cells})"
