"""Stationary autocorrelations, transport integrals, and the
perturbed-equilibrium (Onsager regression) consistency check."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import sympy as sp

from .errors import NonDecayingTail, NotStationary, WindowTooShort
from .fp import fit_rate
from .grids import Grid1D
from .model import DiffusionMatrix, PerturbationSpec, Potential
from .observables import GLE, OVERDAMPED, UNDERDAMPED, ObservableSpec, apply_generator
from .sde import Ensemble, SimConfig, simulate_overdamped
from .stats import N_BATCHES, stationarity_gap

_OBS_DYNAMICS = {
    "overdamped": OVERDAMPED,
    "underdamped": UNDERDAMPED,
    "gle_augmented": GLE,
    "gle_convolution": GLE,
}


def obs_dynamics(ensemble_tag: str) -> str:
    return _OBS_DYNAMICS[ensemble_tag]


@dataclass(frozen=True)
class CorrelationSeries:
    """Estimated stationary correlation K(t) = E[A(x_t) B(x_0)] with
    per-lag batch-means standard errors.

    batch_values keeps the per-batch series: derived quantities (time
    integrals, cumulative predictors) are formed per batch and averaged, so
    their standard errors reflect the strong correlation of neighbouring
    lags instead of assuming independent lag noise."""

    lags: np.ndarray
    values: np.ndarray
    se: np.ndarray
    a_tag: str
    b_tag: str
    n_samples_per_lag: np.ndarray
    batch_values: np.ndarray = None


def _cross_correlation_block(a: np.ndarray, b: np.ndarray, n_lags: int) -> np.ndarray:
    """Sum over paths and time origins of a[k+l] b[k], l = 0..n_lags-1."""
    n = a.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fa = np.fft.rfft(a, nfft, axis=1)
    fb = np.fft.rfft(b, nfft, axis=1)
    c = np.fft.irfft(fa * np.conj(fb), nfft, axis=1)[:, :n_lags]
    return c.sum(axis=0)


def autocorrelation(
    ensemble: Ensemble,
    a: ObservableSpec,
    b: ObservableSpec,
    max_lag: float,
    *,
    check_stationary: bool = True,
) -> CorrelationSeries:
    """Time-and-ensemble averaged estimate of E[A(x_t) B(x_0)] on a
    stationary ensemble; all valid time origins contribute, standard errors
    come from path-level batch means."""
    dt_rec = float(ensemble.times[1] - ensemble.times[0])
    n_rec = len(ensemble.times)
    n_lags = min(n_rec, int(round(max_lag / dt_rec)) + 1)
    av = a.values(ensemble.states)
    bv = b.values(ensemble.states)

    if check_stationary:
        gap, gse = stationarity_gap(av)
        if gap > 3.0 * max(gse, 1e-12):
            raise NotStationary("observable mean drifts along the trajectory")

    n_paths = ensemble.n_paths
    nb = min(N_BATCHES, n_paths)
    edges = np.linspace(0, n_paths, nb + 1).astype(int)
    counts = np.arange(n_rec, n_rec - n_lags, -1, dtype=float)
    batch_vals = np.empty((nb, n_lags))
    for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        c = _cross_correlation_block(av[lo:hi], bv[lo:hi], n_lags)
        batch_vals[k] = c / ((hi - lo) * counts)
    values = batch_vals.mean(axis=0)
    se = batch_vals.std(axis=0, ddof=1) / np.sqrt(nb)
    lags = np.arange(n_lags) * dt_rec
    return CorrelationSeries(
        lags=lags,
        values=values,
        se=se,
        a_tag=str(a.expr),
        b_tag=str(b.expr),
        n_samples_per_lag=counts * n_paths,
        batch_values=batch_vals,
    )


@dataclass(frozen=True)
class GKIntegral:
    """Time integral of a correlation series with exponential tail closure."""

    value: float
    se: float
    tail_fraction: float
    truncated_at: float
    tail_rate: float


def gk_integral(series: CorrelationSeries, truncation: str = "auto_tail",
                fixed_T: float | None = None) -> GKIntegral:
    """Integrate K over [0, infinity): trapezoid up to the truncation point,
    then the fitted-exponential remainder K(T*)/rate.

    auto_tail truncates at the first sustained |K| < 2 SE crossing; fixed_T
    truncates at the given horizon."""
    k = series.values
    t = series.lags
    se = series.se
    n = len(k)
    if truncation == "fixed_T":
        if fixed_T is None:
            raise ValueError("fixed_T truncation needs a horizon")
        idx = int(np.searchsorted(t, fixed_T, side="right")) - 1
        idx = max(1, min(idx, n - 1))
    elif truncation == "auto_tail":
        noisy = np.abs(k) < 2.0 * se
        idx = n - 1
        run = 0
        for i in range(1, n):
            run = run + 1 if noisy[i] else 0
            if run >= 3:
                idx = i - 2
                break
        idx = max(idx, 10 if n > 10 else n - 1)
    else:
        raise ValueError(f"unknown truncation policy {truncation!r}")

    try:
        fit = fit_rate(t[: idx + 1], np.abs(k[: idx + 1]), norm_tag="corr",
                       se=se[: idx + 1] if np.any(se > 0) else None)
    except WindowTooShort:
        fit = fit_rate(t[: idx + 1], np.abs(k[: idx + 1]), norm_tag="corr")
    if fit.rate <= 0:
        raise NonDecayingTail("correlation tail shows no positive decay rate")
    body = float(np.trapezoid(k[: idx + 1], t[: idx + 1]))
    remainder = float(k[idx] / fit.rate)
    value = body + remainder
    if series.batch_values is not None:
        bv = series.batch_values
        per_batch = np.trapezoid(bv[:, : idx + 1], t[: idx + 1], axis=1) + bv[:, idx] / fit.rate
        se_val = float(per_batch.std(ddof=1) / np.sqrt(bv.shape[0]))
    else:
        w = np.gradient(t[: idx + 1])
        w[0] *= 0.5
        w[-1] *= 0.5
        se_val = float(np.sqrt(np.sum((w * se[: idx + 1]) ** 2)))
    denom = max(abs(value), 1e-300)
    return GKIntegral(
        value=value,
        se=se_val,
        tail_fraction=abs(remainder) / denom,
        truncated_at=float(t[idx]),
        tail_rate=fit.rate,
    )


def carre_du_champ(
    g: ObservableSpec, h: ObservableSpec, potential: Potential, sigma: DiffusionMatrix
) -> ObservableSpec:
    """Gamma(g, h) = L0(gh) - g L0 h - h L0 g, computed symbolically.

    For the constant-sigma position dynamics this reduces to
    2 (grad g)^T sig sig^T grad h; the symbolic route keeps the identity
    exact for polynomial observables."""
    lg = apply_generator(g, potential, sigma)
    lh = apply_generator(h, potential, sigma)
    lgh = apply_generator(g * h, potential, sigma)
    expr = sp.expand(lgh.expr - g.expr * lh.expr - h.expr * lg.expr)
    return ObservableSpec(expr, g.dynamics, g.dim, kind="carre_du_champ")


def diffusion_coefficient(
    ensemble: Ensemble,
    potential: Potential,
    sigma: DiffusionMatrix,
    i: int,
    j: int,
    max_lag: float = 8.0,
) -> GKIntegral:
    """Recover (sig sig^T)_{ij} from the stationary force correlations
    int_0^inf E[(sig sig^T grad V)_i(q_s) (sig sig^T grad V)_j(q_0)] ds."""
    d = potential.dim
    syms = ObservableSpec.from_string("q1", OVERDAMPED, d).symbols
    grad_v = [sp.diff(potential.sympy_expr(syms), s) for s in syms]
    ss = sigma.ssT

    def force_obs(axis):
        expr = sum(ss[axis, m] * grad_v[m] for m in range(d))
        return ObservableSpec(sp.expand(expr), OVERDAMPED, d)

    series = autocorrelation(ensemble, force_obs(i), force_obs(j), max_lag)
    return gk_integral(series, "auto_tail")


@dataclass(frozen=True)
class OnsagerCheck:
    """Per-epsilon transport integrals under the perturbed equilibria and
    the verdict on their approach to the unperturbed value."""

    eps_list: tuple
    integrals: tuple
    ses: tuple
    gaps: tuple
    passed: bool


def onsager_regression_check(
    potential: Potential,
    pert: PerturbationSpec,
    g: ObservableSpec,
    sigma: DiffusionMatrix,
    eps_list,
    cfg: SimConfig,
    *,
    grid: Grid1D | None = None,
    max_lag: float = 8.0,
) -> OnsagerCheck:
    """Compute -int K under the epsilon-perturbed stationary dynamics (the
    perturbed Gibbs state is reached by burn-in) for each epsilon, plus the
    unperturbed value, and test that the gap closes as epsilon decreases."""
    if not pert.is_gradient:
        raise ValueError("regression check needs a gradient perturbation")
    values, ses = [], []
    eps_all = [0.0] + [float(e) for e in eps_list]
    for eps in eps_all:
        p_eps = replace(pert, epsilon=eps) if eps != 0.0 else None
        ens = simulate_overdamped(potential, sigma, p_eps, cfg, "gibbs", grid=grid)
        lg = apply_generator(g, potential, sigma, pert=p_eps)
        w_obs = ObservableSpec(
            pert.w_sympy(g.symbols[: g.dim]), g.dynamics, g.dim, kind="perturbation"
        )
        lw = apply_generator(w_obs, potential, sigma, pert=p_eps)
        series = autocorrelation(ens, lg, lw, max_lag, check_stationary=False)
        gk = gk_integral(series, "auto_tail")
        values.append(-gk.value)
        ses.append(gk.se)
    base = values[0]
    gaps = [abs(v - base) for v in values[1:]]
    se_comb = [np.hypot(s, ses[0]) for s in ses[1:]]
    # eps_list is decreasing: gaps must not grow (1 SE slack) and must close
    ok = all(
        gaps[k + 1] <= gaps[k] + se_comb[k + 1] for k in range(len(gaps) - 1)
    )
    ok = ok and gaps[-1] < 3.0 * se_comb[-1]
    return OnsagerCheck(
        eps_list=tuple(eps_all),
        integrals=tuple(values),
        ses=tuple(ses),
        gaps=tuple(gaps),
        passed=bool(ok),
    )
