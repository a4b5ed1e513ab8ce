"""Response-function estimation and linear-response predictors.

estimate_response measures R(t, eps; phi) = (E_pert[phi] - E_unpert[phi])/eps
from paired simulations on common random numbers. predict_response computes
the eps-free prediction as the time-integrated stationary cross-correlation
of phi with a conjugate observable h obtained by integrating the force
pairing by parts against the Gibbs density:

    overdamped   h = (sig sig^T M) . grad V - div(sig sig^T M)
    underdamped  h = beta grad W . p
    GLE          h = beta grad W . p
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import sympy as sp

from .errors import NonGradientPerturbation, NotStationary, SEOverflow
from .grids import Grid1D
from .model import DiffusionMatrix, PerturbationSpec, Potential
from .observables import GLE, OVERDAMPED, UNDERDAMPED, ObservableSpec, state_symbols
from .quadrature import simpson_1d
from .reports import Verdict
from .sde import (
    Ensemble,
    SimConfig,
    simulate_gle_augmented,
    simulate_overdamped,
    simulate_underdamped,
)
from .stats import batch_means, stationarity_gap

TOL_SCALE_FLOOR = 1e-3  # Monte Carlo precision floor, relative to curve scale


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to simulate one dynamics and its perturbation."""

    potential: Potential
    sigma: DiffusionMatrix | None = None
    beta: float = 1.0
    alpha: float | None = None          # GLE memory rate
    pert: PerturbationSpec | None = None
    grid: Grid1D | None = None          # quadrature / rejection-sampling grid

    def with_epsilon(self, eps: float) -> PerturbationSpec:
        if self.pert is None:
            raise ValueError("bundle has no perturbation")
        return replace(self.pert, epsilon=float(eps))


@dataclass(frozen=True)
class ResponseCurve:
    times: np.ndarray
    values: np.ndarray
    se: np.ndarray
    epsilon: float
    n_paths: int
    estimator_tag: str


def simulate(bundle: ModelBundle, dynamics: str, pert, cfg: SimConfig,
             init="gibbs") -> Ensemble:
    """Dispatch to the dynamics-specific simulator."""
    if dynamics == OVERDAMPED:
        return simulate_overdamped(bundle.potential, bundle.sigma, pert, cfg,
                                   init, grid=bundle.grid)
    if dynamics == UNDERDAMPED:
        return simulate_underdamped(bundle.potential, bundle.sigma, pert, cfg,
                                    init, beta=bundle.beta, grid=bundle.grid)
    if dynamics == GLE:
        return simulate_gle_augmented(bundle.potential, bundle.alpha, bundle.beta,
                                      pert, cfg, init, grid=bundle.grid)
    raise ValueError(f"unknown dynamics {dynamics!r}")


def response_from_pair(pert_ens: Ensemble, unpert_ens: Ensemble,
                       phi: ObservableSpec, epsilon: float) -> ResponseCurve:
    """Paired-CRN response: difference per path and time, then the epsilon
    division (differencing first avoids catastrophic cancellation)."""
    diff = phi.values(pert_ens.states) - phi.values(unpert_ens.states)
    mean, se = batch_means(diff)
    values = mean / epsilon
    ses = se / epsilon
    _guard_se(values, ses)
    return ResponseCurve(pert_ens.times.copy(), values, ses, epsilon,
                         pert_ens.n_paths, "paired_crn")


def _guard_se(values: np.ndarray, ses: np.ndarray) -> None:
    scale = float(np.max(np.abs(values)))
    v, s = abs(float(values[-1])), float(ses[-1])
    if s > 10.0 * v and s > 1e-9 * max(scale, 1.0):
        raise SEOverflow("terminal standard error dominates the response value")


def estimate_response(
    dynamics: str,
    bundle: ModelBundle,
    phi: ObservableSpec,
    epsilon: float,
    cfg: SimConfig,
    estimator: str = "paired_crn",
) -> ResponseCurve:
    """Monte Carlo response function from perturbed/unperturbed runs that
    share seeds (paired_crn) or use disjoint seeds with a quadrature
    baseline (independent)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pert = bundle.with_epsilon(epsilon)
    pert_ens = simulate(bundle, dynamics, pert, cfg)
    if estimator == "paired_crn":
        unpert_ens = simulate(bundle, dynamics, None, cfg)
        return response_from_pair(pert_ens, unpert_ens, phi, epsilon)
    if estimator == "independent":
        baseline = gibbs_expectation(bundle, phi)
        vals = phi.values(pert_ens.states)
        mean, se = batch_means(vals)
        values = (mean - baseline) / epsilon
        ses = se / epsilon
        _guard_se(values, ses)
        return ResponseCurve(pert_ens.times.copy(), values, ses, epsilon,
                             cfg.n_paths, "independent")
    raise ValueError(f"unknown estimator {estimator!r}")


def _config_only(phi: ObservableSpec) -> bool:
    qsyms = set(state_symbols(phi.dynamics, phi.dim)[: phi.dim])
    return phi.expr.free_symbols <= qsyms


def gibbs_expectation(bundle: ModelBundle, phi: ObservableSpec,
                      w_shift: PerturbationSpec | None = None) -> float:
    """E[phi] under the Gibbs state of V (or V - eps W with w_shift), by
    Simpson quadrature on the bundle grid. Configuration observables only."""
    if bundle.grid is None:
        raise ValueError("bundle has no quadrature grid")
    if not _config_only(phi):
        raise ValueError("quadrature baseline requires a configuration observable")
    x = bundle.grid.nodes
    v = bundle.potential.evaluate(x)
    if w_shift is not None and w_shift.epsilon != 0.0:
        v = v - w_shift.epsilon * w_shift.w_value(x)
    logw = -bundle.beta * (v - v.min())
    w = np.exp(logw)
    qsym = state_symbols(phi.dynamics, phi.dim)[0]
    f = sp.lambdify([qsym], phi.expr, modules="numpy")
    fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    return simpson_1d(fx * w, bundle.grid) / simpson_1d(w, bundle.grid)


def conjugate_spec(dynamics: str, bundle: ModelBundle) -> ObservableSpec:
    """Symbolic conjugate observable h for the bundle's perturbation."""
    pert = bundle.pert
    d = bundle.potential.dim
    syms = state_symbols(dynamics, d)
    q = syms[:d]
    if dynamics == OVERDAMPED:
        ss = bundle.sigma.ssT
        grad_v = [sp.diff(bundle.potential.sympy_expr(q), s) for s in q]
        m = _m_sympy(pert, q)
        expr = sum(ss[i, j] * m[j] * grad_v[i] for i in range(d) for j in range(d))
        expr -= sum(ss[i, j] * sp.diff(m[j], q[i]) for i in range(d) for j in range(d))
        return ObservableSpec(sp.expand(expr), dynamics, d, kind="conjugate")
    if dynamics in (UNDERDAMPED, GLE):
        if not pert.is_gradient:
            raise NonGradientPerturbation("kinetic response needs a potential perturbation")
        p = syms[d:2 * d]
        w = pert.w_sympy(q)
        expr = bundle.beta * sum(sp.diff(w, q[i]) * p[i] for i in range(d))
        return ObservableSpec(expr, dynamics, d, kind="conjugate")
    raise ValueError(f"unknown dynamics {dynamics!r}")


def _m_sympy(pert: PerturbationSpec, q) -> list:
    if pert.form == "general_field":
        u = sum((s - c) ** 2 for s, c in zip(q, pert.center)) / pert.radius**2
        prof = sp.Piecewise((pert.amplitude * sp.exp(-1 / (1 - u)), u < 1), (0, True))
        return [prof * dk for dk in pert.direction]
    if pert.form == "analytic" and pert.m_const is not None:
        return [sp.Float(c) for c in pert.m_const]
    w = pert.w_sympy(q)
    return [sp.diff(w, s) for s in q]


def predict_response(
    dynamics: str,
    bundle: ModelBundle,
    phi: ObservableSpec,
    cfg: SimConfig,
    *,
    max_lag: float | None = None,
) -> ResponseCurve:
    """Epsilon-free linear-response prediction: cumulative trapezoid of the
    stationary correlation E[h(x_0) phi(x_s)] from one unperturbed ensemble.
    Raises NotStationary when the time-slice mean of h drifts beyond 3 SE."""
    from .greenkubo import autocorrelation  # local import avoids a cycle

    ens = simulate(bundle, dynamics, None, cfg, "gibbs")
    h = conjugate_spec(dynamics, bundle)
    hv = h.values(ens.states)
    gap, gse = stationarity_gap(hv)
    if gap > 3.0 * max(gse, 1e-12):
        raise NotStationary("conjugate observable drifts; ensemble not stationary")
    horizon = max_lag if max_lag is not None else float(ens.times[-1])
    series = autocorrelation(ens, phi, h, horizon, check_stationary=False)
    t = series.lags

    def cumtrapz(row):
        return np.concatenate([[0.0], np.cumsum(0.5 * (row[1:] + row[:-1]) * np.diff(t))])

    # integrate per path batch: neighbouring lags share sample noise, so the
    # error of the integral must come from the spread of integrated batches
    per_batch = np.stack([cumtrapz(row) for row in series.batch_values])
    values = per_batch.mean(axis=0)
    ses = per_batch.std(axis=0, ddof=1) / np.sqrt(per_batch.shape[0])
    return ResponseCurve(t, values, ses, 0.0, ens.n_paths, "predictor")


def stationary_gateaux(
    potential: Potential,
    pert: PerturbationSpec,
    phi: ObservableSpec,
    beta: float,
    grid: Grid1D,
    *,
    target: float = 1e-8,
    max_refine: int = 4,
) -> float:
    """Derivative of the stationary average of phi along the perturbation:
    beta * (E[phi W] - E[phi] E[W]) under the Gibbs state, by Simpson
    quadrature with Richardson control of the refinement error."""
    if not pert.is_gradient:
        raise NonGradientPerturbation("stationary derivative needs gradient form")
    if not _config_only(phi):
        raise ValueError("configuration observables only")
    qsym = state_symbols(phi.dynamics, phi.dim)[0]
    f = sp.lambdify([qsym], phi.expr, modules="numpy")

    def value_on(g: Grid1D) -> float:
        x = g.nodes
        v = potential.evaluate(x)
        w = np.exp(-beta * (v - v.min()))
        z = simpson_1d(w, g)
        fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
        wx = pert.w_value(x)
        e_phi = simpson_1d(fx * w, g) / z
        e_w = simpson_1d(wx * w, g) / z
        e_pw = simpson_1d(fx * wx * w, g) / z
        return beta * (e_pw - e_phi * e_w)

    g = grid
    prev = value_on(g)
    for _ in range(max_refine):
        g = g.refine()
        cur = value_on(g)
        if abs(cur - prev) / 15.0 < target:
            return cur
        prev = cur
    raise ValueError("Richardson error estimate did not reach the target")


@dataclass(frozen=True)
class DoubleLimitTable:
    """R(t, eps) on a grid, with the iterated-limit consistency verdicts."""

    eps_list: tuple
    t_list: tuple
    values: np.ndarray          # (n_eps, n_t)
    ses: np.ndarray
    predictor: ResponseCurve
    gateaux: float | None
    verdicts: tuple

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def _at_times(curve: ResponseCurve, t_list) -> tuple[np.ndarray, np.ndarray]:
    idx = [int(np.argmin(np.abs(curve.times - t))) for t in t_list]
    return curve.values[idx], curve.se[idx]


def double_limit_table(
    dynamics: str,
    bundle: ModelBundle,
    phi: ObservableSpec,
    eps_list,
    t_list,
    cfg: SimConfig,
    *,
    tol_floor: float | None = None,
) -> DoubleLimitTable:
    """Tabulate R(t, eps) over a decreasing eps grid and an increasing time
    grid, and check the three limit statements: the per-eps long-time limit
    matches the stationary quotient, the small-eps limit matches the
    predictor, and the two iterated limits agree (and agree with the
    stationary derivative for gradient perturbations)."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    t_list = [float(t) for t in t_list]

    unpert = simulate(bundle, dynamics, None, cfg)
    rows, row_ses = [], []
    for eps in eps_list:
        pert_ens = simulate(bundle, dynamics, bundle.with_epsilon(eps), cfg)
        curve = response_from_pair(pert_ens, unpert, phi, eps)
        v, s = _at_times(curve, t_list)
        rows.append(v)
        row_ses.append(s)
    values = np.array(rows)
    ses = np.array(row_ses)

    predictor = predict_response(dynamics, bundle, phi, cfg)
    pred_v, pred_s = _at_times(predictor, t_list)

    scale = max(float(np.max(np.abs(values))), float(np.max(np.abs(pred_v))), 1e-12)
    floor = (TOL_SCALE_FLOOR * scale) if tol_floor is None else tol_floor

    def tol(se_comb):
        return max(3.0 * se_comb, floor)

    verdicts = []
    # (a) per-eps long-time limit vs the stationary quotient by quadrature
    quad_ok = bundle.pert.is_gradient and bundle.grid is not None and _config_only(phi)
    if quad_ok:
        for k, eps in enumerate(eps_list):
            pert = bundle.with_epsilon(eps)
            quot = (gibbs_expectation(bundle, phi, w_shift=pert)
                    - gibbs_expectation(bundle, phi)) / eps
            verdicts.append(Verdict(
                name=f"long_time_limit_eps={eps:g}",
                lhs=float(values[k, -1]), rhs=float(quot),
                tolerance=tol(float(ses[k, -1])),
                passed=abs(values[k, -1] - quot) <= tol(float(ses[k, -1])),
            ))
    # (b) small-eps limit (linear extrapolation over eps) vs predictor, per t
    e = np.asarray(eps_list)
    design = np.stack([np.ones_like(e), e], axis=-1)
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    intercepts = coef[0]
    se_int = np.sqrt((ses**2).mean(axis=0))
    for k, t in enumerate(t_list):
        s = float(np.hypot(se_int[k], pred_s[k]))
        verdicts.append(Verdict(
            name=f"small_eps_limit_t={t:g}",
            lhs=float(intercepts[k]), rhs=float(pred_v[k]),
            tolerance=tol(s),
            passed=abs(intercepts[k] - pred_v[k]) <= tol(s),
        ))
    # (c) the two iterated limits agree
    lim_eps_then_t = float(pred_v[-1])
    lim_t_then_eps = float(intercepts[-1])
    s = float(np.hypot(pred_s[-1], se_int[-1]))
    verdicts.append(Verdict(
        name="iterated_limits_agree",
        lhs=lim_t_then_eps, rhs=lim_eps_then_t,
        tolerance=tol(s),
        passed=abs(lim_t_then_eps - lim_eps_then_t) <= tol(s),
    ))
    gateaux = None
    if quad_ok:
        gateaux = stationary_gateaux(bundle.potential, bundle.pert, phi,
                                     bundle.beta, bundle.grid)
        for name, lhs, s in (
            ("t_then_eps_vs_stationary", lim_t_then_eps, se_int[-1]),
            ("eps_then_t_vs_stationary", lim_eps_then_t, pred_s[-1]),
        ):
            verdicts.append(Verdict(
                name=name, lhs=float(lhs), rhs=float(gateaux),
                tolerance=tol(float(s)),
                passed=abs(lhs - gateaux) <= tol(float(s)),
            ))
    return DoubleLimitTable(
        eps_list=tuple(eps_list),
        t_list=tuple(t_list),
        values=values,
        ses=ses,
        predictor=predictor,
        gateaux=gateaux,
        verdicts=tuple(verdicts),
    )
