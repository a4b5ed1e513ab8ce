"""Numerical verification of the reversibility equivalences.

Five kinds of check, applied per dynamics where meaningful:
  correlation symmetry   E[A(x_t)B(x_0)] = E[B(x_t)A(x_0)] (with momentum
                         flip for kinetic dynamics),
  generator symmetry     <L f, g> = <f, L g> against the candidate
                         stationary density, by quadrature,
  zero flux              stationary probability current vanishes,
  potential condition    the force field is curl-free (a gradient),
  evenness / separation  the stationary law is even in p and factorizes.

A reversible model passes every applicable check; an irreversible one
fails every applicable check. Tolerances are stated with each result:
quadrature checks at 1e-8 (1e-6 for non-polynomial test functions), Monte
Carlo checks at 3 SE, grid checks at 10 h^order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import sympy as sp
from scipy import stats as sps

from .errors import InsufficientSamples
from .fp import DensityField, probability_flux
from .grids import Grid1D, Grid2D
from .model import DiffusionMatrix, PerturbationSpec, Potential
from .observables import GLE, OVERDAMPED, UNDERDAMPED, ObservableSpec, apply_generator, state_symbols
from .quadrature import gauss_hermite_points, simpson_1d, simpson_2d
from .reports import Verdict, make_verdict
from .sde import Ensemble


@dataclass(frozen=True)
class ReversibilityReport:
    dynamics_tag: str
    model_tag: str
    checks: tuple

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)


def _nearest_indices(lags: np.ndarray, wanted) -> list[int]:
    return sorted({int(np.argmin(np.abs(lags - t))) for t in wanted})


def correlation_symmetry_test(
    ensemble: Ensemble,
    pairs,
    lags,
    *,
    flip: bool = False,
) -> list[Verdict]:
    """Per observable pair and lag, compare the forward and time-reversed
    correlations; for kinetic dynamics (flip=True) the reversed side uses
    parity-flipped observables. Differences are formed per path batch, so
    the standard error reflects the strong coupling of the two estimators."""
    from .greenkubo import autocorrelation

    max_lag = float(max(lags))
    out = []
    for a, b in pairs:
        s1 = autocorrelation(ensemble, a, b, max_lag, check_stationary=False)
        if flip:
            a2, b2 = b.flip_momentum(), a.flip_momentum()
        else:
            a2, b2 = b, a
        s2 = autocorrelation(ensemble, a2, b2, max_lag, check_stationary=False)
        diff = s1.batch_values - s2.batch_values
        nb = diff.shape[0]
        mean = diff.mean(axis=0)
        se = diff.std(axis=0, ddof=1) / np.sqrt(nb)
        for idx in _nearest_indices(s1.lags, lags):
            t = s1.lags[idx]
            tol = 3.0 * max(float(se[idx]), 1e-12)
            out.append(make_verdict(
                f"corr_symmetry[{s1.a_tag};{s1.b_tag}]@t={t:g}",
                float(s1.values[idx]), float(s2.values[idx]), tol,
            ))
    return out


def _weight_nodes(weight, grid, dims: int, order: int):
    """Quadrature nodes/weights for the candidate stationary density.

    weight forms:
      ("gaussian", mean, cov)       Gauss-Hermite, exact for polynomials
      ("grid1d", callable)          Simpson nodes on grid (1D)
      ("grid2d", callable)          Simpson on a 2D grid
    """
    kind = weight[0]
    if kind == "gaussian":
        _, mean, cov = weight
        pts, w = gauss_hermite_points(order, np.asarray(mean), np.asarray(cov))
        return pts, w, None
    if kind == "grid1d":
        _, density = weight
        g: Grid1D = grid
        x = g.nodes[:, None]
        w = density(x[:, 0])
        return x, w, g
    if kind == "grid2d":
        _, density = weight
        g: Grid2D = grid
        qx, qy = np.meshgrid(g.x.nodes, g.y.nodes, indexing="ij")
        pts = np.stack([qx.ravel(), qy.ravel()], axis=-1)
        w = density(pts).reshape(qx.shape)
        return pts, w, g
    raise ValueError(f"unknown weight form {kind!r}")


def _quad_pairing(fvals, weight_nodes, grid):
    """Integrate f against the weight nodes produced by _weight_nodes."""
    pts, w, g = weight_nodes if isinstance(weight_nodes, tuple) else (None, None, None)
    raise RuntimeError("internal")


def generator_symmetry_quadrature(
    potential: Potential,
    sigma: DiffusionMatrix,
    pairs,
    *,
    dynamics: str = OVERDAMPED,
    pert: PerturbationSpec | None = None,
    alpha: float | None = None,
    beta: float = 1.0,
    extra_drift=None,
    weight=None,
    grid=None,
    order: int = 16,
) -> list[Verdict]:
    """Residuals of the symmetry pairing <f, L g> - <L~ f, g> against the
    candidate stationary density (L~ applies the momentum flip for kinetic
    dynamics). The generator is applied symbolically; integrals use
    Gauss-Hermite for Gaussian densities and Simpson grids otherwise."""
    d = potential.dim
    syms = state_symbols(dynamics, d)

    def gen_apply(obs: ObservableSpec) -> ObservableSpec:
        lo = apply_generator(obs, potential, sigma, beta=beta, alpha=alpha, pert=pert)
        if extra_drift is not None:
            add = sum(e * sp.diff(obs.expr, s) for e, s in zip(extra_drift, syms[:d]))
            lo = ObservableSpec(sp.expand(lo.expr + add), dynamics, d, lo.kind)
        return lo

    if weight is None:
        weight = _gibbs_weight(potential, pert, dynamics, beta, grid, alpha)
    pts, w, wgrid = _weight_nodes(weight, grid, d, order)

    def integrate(expr: sp.Expr) -> float:
        fn = sp.lambdify(syms, expr, modules="numpy")
        vals = np.broadcast_to(
            np.asarray(fn(*(pts[..., i] for i in range(pts.shape[-1]))), dtype=float),
            pts.shape[:-1],
        )
        if weight[0] == "gaussian":
            return float(np.dot(w, vals))
        if weight[0] == "grid1d":
            num = simpson_1d(vals * w, wgrid)
            den = simpson_1d(w, wgrid)
            return num / den
        vals = vals.reshape(w.shape)
        return simpson_2d(vals * w, wgrid) / simpson_2d(w, wgrid)

    out = []
    for f, g in pairs:
        lhs = integrate((gen_apply(g).expr * f.expr))
        if dynamics == OVERDAMPED:
            rhs = integrate((gen_apply(f).expr * g.expr))
        else:
            rhs = integrate((gen_apply(f.flip_momentum()).expr * g.flip_momentum().expr))
        poly = f.expr.is_polynomial() and g.expr.is_polynomial()
        tol = 1e-8 if poly else 1e-6
        out.append(make_verdict(
            f"generator_symmetry[{f.expr};{g.expr}]", lhs, rhs, tol))
    return out


def _gibbs_weight(potential, pert, dynamics, beta, grid, alpha):
    """Default candidate stationary weight from the (possibly perturbed)
    Gibbs form, as a weight spec for _weight_nodes."""
    d = potential.dim

    def veff(q):
        v = potential.evaluate(q)
        if pert is not None and pert.epsilon != 0.0 and pert.is_gradient:
            v = v - pert.epsilon * pert.w_value(q)
        return v

    if dynamics == OVERDAMPED:
        if d == 1:
            return ("grid1d", lambda q: np.exp(-beta * veff(q)))
        if d == 2 and isinstance(grid, Grid2D):
            return ("grid2d", lambda pts: np.exp(-beta * veff(pts)))
        raise ValueError("provide an explicit weight for this configuration")
    if dynamics == UNDERDAMPED and d == 1 and isinstance(grid, Grid2D):
        def dens(pts):
            return np.exp(-beta * (veff(pts[..., :1])[...,] + 0.5 * pts[..., 1] ** 2))
        return ("grid2d", dens)
    raise ValueError("provide an explicit weight for this configuration")


def flux_check(rho: DensityField, potential, sigma, pert=None,
               drift_override=None) -> Verdict:
    """Zero-flux check of a candidate stationary density: the maximal face
    current must be below 10 h^2 (the flux discretization is second order)."""
    j = probability_flux(rho, potential, sigma, pert, drift_override)
    if isinstance(rho.grid, Grid1D):
        maxj = float(np.max(np.abs(j)))
        h = rho.grid.h
    else:
        maxj = float(max(np.max(np.abs(j[0])), np.max(np.abs(j[1]))))
        h = max(rho.grid.x.h, rho.grid.y.h)
    return make_verdict("zero_flux", maxj, 0.0, 10.0 * h**2)


def potential_condition_test(drift_fn, sigma: DiffusionMatrix, grid) -> Verdict:
    """Gradient test of 2 (sig sig^T)^{-1} b via the discrete curl (2D);
    one-dimensional fields are gradients by construction."""
    if isinstance(grid, Grid1D):
        return make_verdict("potential_condition", 0.0, 0.0, 10.0 * grid.h)
    g: Grid2D = grid
    qx, qy = g.center_mesh()
    pts = np.stack([qx, qy], axis=-1)
    b = np.asarray(drift_fn(pts), dtype=float)
    inv = np.linalg.inv(sigma.ssT)
    field = b @ inv.T
    dgy_dx = np.gradient(field[..., 1], g.x.h, axis=0)
    dgx_dy = np.gradient(field[..., 0], g.y.h, axis=1)
    curl = dgy_dx - dgx_dy
    h = max(g.x.h, g.y.h)
    return make_verdict("potential_condition", float(np.max(np.abs(curl))), 0.0, 10.0 * h)


@dataclass(frozen=True)
class EvennessSeparationResult:
    evenness: tuple          # Verdicts (p-value vs 0.01) per projection
    separation: tuple
    momentum_normality: tuple

    @property
    def checks(self) -> tuple:
        return self.evenness + self.separation + self.momentum_normality

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)


def _sym_edges(vals: np.ndarray, nbins: int, span: float) -> np.ndarray:
    lim = span * float(np.std(vals))
    return np.linspace(-lim, lim, nbins + 1)


def _evenness_pvalue(q, p, nbins=16, span=3.5) -> float:
    """Chi-square comparison of the (q, p) histogram with its p-mirror."""
    eq = np.quantile(q, np.linspace(0.0, 1.0, nbins + 1))
    eq[0], eq[-1] = -np.inf, np.inf
    ep = _sym_edges(p, nbins, span)
    hist, _, _ = np.histogram2d(q, p, bins=[eq, ep])
    left = hist[:, : nbins // 2]
    right = hist[:, nbins // 2:][:, ::-1]
    n1, n2 = left.ravel(), right.ravel()
    mask = (n1 + n2) >= 10
    if not np.any(mask):
        return 1.0
    chi2 = float(np.sum((n1[mask] - n2[mask]) ** 2 / (n1[mask] + n2[mask])))
    return float(sps.chi2.sf(chi2, df=int(mask.sum())))


def _independence_pvalue(x, y, nbins=12) -> float:
    ex = np.quantile(x, np.linspace(0, 1, nbins + 1))
    ey = np.quantile(y, np.linspace(0, 1, nbins + 1))
    ex[0], ex[-1] = -np.inf, np.inf
    ey[0], ey[-1] = -np.inf, np.inf
    hist, _, _ = np.histogram2d(x, y, bins=[ex, ey])
    hist = hist[hist.sum(axis=1) > 0][:, hist.sum(axis=0) > 0]
    res = sps.chi2_contingency(hist, lambda_="log-likelihood")
    return float(res.pvalue)


def evenness_and_separation_test(
    points: np.ndarray,
    dim: int,
    *,
    beta: float = 1.0,
    has_memory: bool = False,
    level: float = 0.01,
) -> EvennessSeparationResult:
    """Stationary-sample checks on pooled, decorrelated phase-space points
    of shape (n, 2d) or (n, 3d): evenness of the law under p -> -p,
    independence of q (and z) from p, and Gaussianity of each momentum
    marginal. Needs at least 1e5 points."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 100_000:
        raise InsufficientSamples("need at least 1e5 pooled points")
    q = points[:, :dim]
    p = points[:, dim:2 * dim]
    z = points[:, 2 * dim:3 * dim] if has_memory else None

    even, sep, norm = [], [], []
    partners = [("q", q)] + ([("z", z)] if z is not None else [])
    for pname, block in partners:
        for i in range(block.shape[1]):
            for j in range(dim):
                pv = _evenness_pvalue(block[:, i], p[:, j])
                even.append(make_verdict(
                    f"evenness[{pname}{i + 1},p{j + 1}]", pv, 1.0, 1.0 - level))
                pv = _independence_pvalue(block[:, i], p[:, j])
                sep.append(make_verdict(
                    f"separation[{pname}{i + 1},p{j + 1}]", pv, 1.0, 1.0 - level))
    scale = 1.0 / np.sqrt(beta)
    for j in range(dim):
        stat = sps.kstest(p[:, j], "norm", args=(0.0, scale))
        norm.append(make_verdict(f"p_normality[p{j + 1}]", float(stat.pvalue),
                                 1.0, 1.0 - level))
    return EvennessSeparationResult(tuple(even), tuple(sep), tuple(norm))


def pooled_points(ensemble: Ensemble, decorrelation_time: float = 1.5) -> np.ndarray:
    """Pool path states subsampled at ~decorrelation_time spacing so the
    histogram tests see approximately independent points."""
    dt_rec = float(ensemble.times[1] - ensemble.times[0])
    every = max(1, int(round(decorrelation_time / dt_rec)))
    return ensemble.states[:, ::every].reshape(-1, ensemble.state_dim)


def linear_stationary_cov(a_mat: np.ndarray, noise_cov: np.ndarray) -> np.ndarray:
    """Stationary covariance of dx = A x dt + sqrt(noise) dB via the
    continuous Lyapunov equation A S + S A^T + noise_cov = 0."""
    return scipy.linalg.solve_continuous_lyapunov(a_mat, -np.asarray(noise_cov))
