"""Uniform grids for quadrature and finite-volume solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid with ``n`` cells on [lo, hi].

    ``centers`` are the finite-volume cell centers, ``nodes`` the n+1 cell
    faces (used for node-based quadrature).
    """

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError("grid bounds must satisfy lo < hi")
        if self.n < 2:
            raise ValueError("grid needs at least 2 cells")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.h

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n + 1)

    def refine(self, factor: int = 2) -> "Grid1D":
        return Grid1D(self.lo, self.hi, self.n * factor)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two 1D grids (axis 0 = x/q, axis 1 = y/p)."""

    x: Grid1D
    y: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.n, self.y.n)

    @property
    def cell_area(self) -> float:
        return self.x.h * self.y.h

    def center_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays of shape (nx, ny)."""
        return np.meshgrid(self.x.centers, self.y.centers, indexing="ij")

    def refine(self, factor: int = 2) -> "Grid2D":
        return Grid2D(self.x.refine(factor), self.y.refine(factor))


def box_grid(lo: float, hi: float, n: int) -> Grid2D:
    """Square 2D grid [lo,hi]^2 with n cells per axis."""
    return Grid2D(Grid1D(lo, hi, n), Grid1D(lo, hi, n))
