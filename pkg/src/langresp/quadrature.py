"""Deterministic quadrature helpers (Simpson grids, Gauss-Hermite)."""

from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import simpson

from .grids import Grid1D, Grid2D


def simpson_1d(values: np.ndarray, grid: Grid1D) -> float:
    """Composite Simpson integral of node samples over the grid."""
    return float(simpson(values, x=grid.nodes))


def simpson_2d(values: np.ndarray, grid: Grid2D) -> float:
    """Tensor-product Simpson integral; ``values`` sampled on the node mesh."""
    inner = simpson(values, x=grid.y.nodes, axis=1)
    return float(simpson(inner, x=grid.x.nodes))


def gauss_hermite_points(order: int, mean: np.ndarray, cov: np.ndarray):
    """Nodes and weights for E[f(X)] with X ~ N(mean, cov), tensorized.

    Exact for polynomials up to degree 2*order-1 per axis; dimension of
    ``mean`` sets the tensor rank (intended for d <= 3).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.size
    x1, w1 = hermegauss(order)  # weight e^{-x^2/2}, sum w = sqrt(2 pi)
    w1 = w1 / np.sqrt(2.0 * np.pi)
    grids = np.meshgrid(*([x1] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(z.shape[0])
    for ws in np.meshgrid(*([w1] * d), indexing="ij"):
        w *= ws.ravel()
    L = np.linalg.cholesky(np.atleast_2d(cov))
    pts = mean + z @ L.T
    return pts, w


def gaussian_expectation(f, mean, cov, order: int = 64) -> float:
    """Gauss-Hermite estimate of E[f(X)], X ~ N(mean, cov); f maps (N,d)->(N,)."""
    pts, w = gauss_hermite_points(order, mean, cov)
    return float(np.dot(w, f(pts)))
