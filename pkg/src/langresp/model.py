"""Potentials, perturbations, diffusion matrices, and Gibbs measures.

Conventions (used throughout the package):
    position dynamics   dq = sig sig^T (-grad V + eps M) dt + sqrt(2/beta) sig dB
    Gibbs density       rho0 = exp(-beta V) / Z
with constant nonsingular sig. beta defaults to 1 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

from .errors import MissingHessian, NonConfining, SingularSigma
from .grids import Grid1D, Grid2D
from .quadrature import simpson_1d, simpson_2d

QUADRATIC = "quadratic"
DOUBLE_WELL = "double_well"
TABULATED = "tabulated"


def _points(x, dim: int) -> np.ndarray:
    """Coerce input to shape (..., dim)."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


@dataclass(frozen=True)
class Potential:
    """Scalar confining potential V with analytic gradient.

    kinds:
        quadratic    V(q) = k/2 |q|^2,          params = [k]
        double_well  V(q) = sum_i a q_i^4 - b q_i^2,  params = [a, b]
        tabulated    cubic-spline interpolation of (q, V) samples, 1D only
    """

    kind: str
    params: tuple = ()
    dim: int = 1
    table: tuple = field(default=None, repr=False, compare=False)

    @classmethod
    def quadratic(cls, k: float = 1.0, dim: int = 1) -> "Potential":
        return cls(QUADRATIC, (float(k),), dim)

    @classmethod
    def double_well(cls, a: float, b: float, dim: int = 1) -> "Potential":
        return cls(DOUBLE_WELL, (float(a), float(b)), dim)

    @classmethod
    def tabulated(cls, q: np.ndarray, v: np.ndarray) -> "Potential":
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if q.ndim != 1 or q.shape != v.shape:
            raise ValueError("tabulated potential needs matching 1D arrays")
        return cls(TABULATED, (), 1, table=(tuple(q), tuple(v)))

    @classmethod
    def tabulated_from_csv(cls, path) -> "Potential":
        data = np.loadtxt(path, delimiter=",")
        return cls.tabulated(data[:, 0], data[:, 1])

    def _spline(self) -> CubicSpline:
        q, v = self.table
        return CubicSpline(np.asarray(q), np.asarray(v))

    def evaluate(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        if self.kind == QUADRATIC:
            (k,) = self.params
            return 0.5 * k * np.sum(x * x, axis=-1)
        if self.kind == DOUBLE_WELL:
            a, b = self.params
            return np.sum(a * x**4 - b * x**2, axis=-1)
        if self.kind == TABULATED:
            return self._spline()(x[..., 0])
        raise ValueError(f"unknown potential kind {self.kind!r}")

    def gradient(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        if self.kind == QUADRATIC:
            (k,) = self.params
            return k * x
        if self.kind == DOUBLE_WELL:
            a, b = self.params
            return 4.0 * a * x**3 - 2.0 * b * x
        if self.kind == TABULATED:
            return self._spline()(x[..., 0], 1)[..., None]
        raise ValueError(f"unknown potential kind {self.kind!r}")

    def hessian(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        eye = np.eye(self.dim)
        if self.kind == QUADRATIC:
            (k,) = self.params
            return np.broadcast_to(k * eye, x.shape + (self.dim,)).copy()
        if self.kind == DOUBLE_WELL:
            a, b = self.params
            diag = 12.0 * a * x**2 - 2.0 * b
            return diag[..., None] * eye
        if self.kind == TABULATED:
            return self._spline()(x[..., 0], 2)[..., None, None]
        raise ValueError(f"unknown potential kind {self.kind!r}")

    def sympy_expr(self, symbols: tuple[sp.Symbol, ...]) -> sp.Expr:
        """Symbolic V(q) for analytic kinds (generator algebra needs this)."""
        if self.kind == QUADRATIC:
            (k,) = self.params
            return sp.Rational(1, 2) * k * sum(s**2 for s in symbols)
        if self.kind == DOUBLE_WELL:
            a, b = self.params
            return sum(a * s**4 - b * s**2 for s in symbols)
        raise ValueError("tabulated potentials have no symbolic form")

    def validate(self, box: float = 6.0, n_check: int = 100, seed: int = 0) -> None:
        """Check finiteness, FD-consistency of the gradient, and confinement.

        Raises NonConfining or ValueError on violation.
        """
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        pts = rng.uniform(-3.0, 3.0, size=(n_check, self.dim))
        v = self.evaluate(pts)
        g = self.gradient(pts)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
            raise ValueError("potential produced non-finite values")
        if self.kind != TABULATED:
            step = 1e-5
            for j in range(self.dim):
                e = np.zeros(self.dim)
                e[j] = step
                fd = (self.evaluate(pts + e) - self.evaluate(pts - e)) / (2 * step)
                err = np.abs(g[:, j] - fd) / (1.0 + np.abs(g[:, j]))
                if np.max(err) >= 1e-6:
                    raise ValueError("gradient inconsistent with finite differences")
        # confinement probe along coordinate rays
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            v_far = self.evaluate(np.array([box * e, -box * e, 2 * box * e, -2 * box * e]))
            v_0 = float(self.evaluate(np.zeros(self.dim)))
            if np.min(v_far) <= v_0 + 1.0:
                raise NonConfining("potential does not grow along grid rays")


# smooth mollifier profile m(u) = exp(-1/(1-u)) on u < 1, zero outside
def _mollifier(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = u < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
    return out


@dataclass(frozen=True)
class PerturbationSpec:
    """Compactly supported perturbation of strength epsilon.

    potential_bump:  W(q) = amplitude * exp(-1/(1 - |q-c|^2/R^2)) inside the
                     ball of radius R, zero outside; the force field is grad W.
    general_field:   M(q) = amplitude * mollifier(|q-c|^2/R^2) * direction,
                     compactly supported but not a compact-potential gradient.
    analytic overrides (oracle/test mode only, analytic_override=True):
                     W a 1D polynomial (w_poly, ascending coeffs) or M a
                     constant vector (m_const).
    """

    form: str
    center: tuple = (0.0,)
    radius: float = 1.0
    amplitude: float = 1.0
    epsilon: float = 0.1
    direction: tuple = None
    w_poly: tuple = None
    m_const: tuple = None
    analytic_override: bool = False

    @classmethod
    def bump(cls, center, radius, amplitude, epsilon) -> "PerturbationSpec":
        center = tuple(np.atleast_1d(np.asarray(center, dtype=float)))
        return cls("potential_bump", center, float(radius), float(amplitude), float(epsilon))

    @classmethod
    def field_bump(cls, center, radius, amplitude, epsilon, direction) -> "PerturbationSpec":
        center = tuple(np.atleast_1d(np.asarray(center, dtype=float)))
        direction = tuple(np.atleast_1d(np.asarray(direction, dtype=float)))
        return cls("general_field", center, float(radius), float(amplitude),
                   float(epsilon), direction=direction)

    @classmethod
    def analytic_w(cls, w_poly, epsilon) -> "PerturbationSpec":
        """1D polynomial W override, e.g. w_poly=(0, 1) for W(q) = q."""
        return cls("analytic", w_poly=tuple(float(c) for c in w_poly),
                   epsilon=float(epsilon), analytic_override=True)

    @classmethod
    def analytic_m(cls, m_const, epsilon) -> "PerturbationSpec":
        """Constant force override, e.g. m_const=(1,) for M = 1."""
        m_const = tuple(np.atleast_1d(np.asarray(m_const, dtype=float)))
        return cls("analytic", m_const=m_const, epsilon=float(epsilon),
                   analytic_override=True)

    @property
    def dim(self) -> int:
        if self.form == "analytic":
            return 1 if self.w_poly is not None else len(self.m_const)
        return len(self.center)

    @property
    def is_gradient(self) -> bool:
        """True when the force is grad W for an available potential W."""
        if self.form == "potential_bump":
            return True
        if self.form == "analytic":
            return self.w_poly is not None or len(self.m_const) == 1
        return False

    def _u(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        d = x - c
        return np.sum(d * d, axis=-1) / self.radius**2

    def w_value(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        if self.form == "potential_bump":
            return self.amplitude * _mollifier(self._u(x))
        if self.form == "analytic":
            if self.w_poly is not None:
                return np.polynomial.polynomial.polyval(x[..., 0], self.w_poly)
            if len(self.m_const) == 1:
                return self.m_const[0] * x[..., 0]
        raise ValueError("perturbation has no potential W")

    def w_gradient(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        if self.form == "potential_bump":
            u = self._u(x)
            w = self.amplitude * _mollifier(u)
            fac = np.zeros_like(u)
            inside = u < 1.0
            fac[inside] = -1.0 / (1.0 - u[inside]) ** 2
            du = 2.0 * (x - np.asarray(self.center)) / self.radius**2
            return (w * fac)[..., None] * du
        if self.form == "analytic":
            if self.w_poly is not None:
                dcoef = np.polynomial.polynomial.polyder(self.w_poly)
                return np.polynomial.polynomial.polyval(x[..., 0], dcoef)[..., None]
            if len(self.m_const) == 1:
                return np.broadcast_to(np.asarray(self.m_const), x.shape).copy()
        raise ValueError("perturbation has no potential W")

    def w_hessian(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        d = self.dim
        if self.form == "potential_bump":
            u = self._u(x)
            w = self.amplitude * _mollifier(u)
            inside = u < 1.0
            g1 = np.zeros_like(u)   # g'(u)  for g = -1/(1-u)
            g2 = np.zeros_like(u)   # g''(u)
            g1[inside] = -1.0 / (1.0 - u[inside]) ** 2
            g2[inside] = -2.0 / (1.0 - u[inside]) ** 3
            du = 2.0 * (x - np.asarray(self.center)) / self.radius**2
            outer = du[..., :, None] * du[..., None, :]
            eye = np.eye(d) * (2.0 / self.radius**2)
            return (w * (g1**2 + g2))[..., None, None] * outer + (w * g1)[..., None, None] * eye
        if self.form == "analytic":
            if self.w_poly is not None:
                d2 = np.polynomial.polynomial.polyder(self.w_poly, 2)
                return np.polynomial.polynomial.polyval(x[..., 0], d2)[..., None, None]
            if len(self.m_const) == 1:
                return np.zeros(x.shape + (1,))
        raise ValueError("perturbation has no potential W")

    def m_value(self, x) -> np.ndarray:
        """Force field M(q), shape (..., dim). Does not include epsilon."""
        x = _points(x, self.dim)
        if self.form in ("potential_bump",):
            return self.w_gradient(x)
        if self.form == "general_field":
            prof = self.amplitude * _mollifier(self._u(x))
            return prof[..., None] * np.asarray(self.direction)
        if self.form == "analytic":
            if self.m_const is not None:
                return np.broadcast_to(np.asarray(self.m_const), x.shape).copy()
            return self.w_gradient(x)
        raise ValueError(f"unknown perturbation form {self.form!r}")

    def m_jacobian(self, x) -> np.ndarray:
        """d M_j / d q_i, shape (..., dim, dim), index order (i, j)."""
        x = _points(x, self.dim)
        if self.form == "potential_bump":
            return self.w_hessian(x)
        if self.form == "general_field":
            u = self._u(x)
            prof = self.amplitude * _mollifier(u)
            g1 = np.zeros_like(u)
            inside = u < 1.0
            g1[inside] = -1.0 / (1.0 - u[inside]) ** 2
            du = 2.0 * (x - np.asarray(self.center)) / self.radius**2
            return (prof * g1)[..., None, None] * (
                du[..., :, None] * np.asarray(self.direction)[None, :]
            )
        if self.form == "analytic":
            if self.m_const is not None:
                return np.zeros(x.shape + (self.dim,))
            return self.w_hessian(x)
        raise ValueError(f"unknown perturbation form {self.form!r}")

    def w_sympy(self, symbols: tuple[sp.Symbol, ...]) -> sp.Expr:
        if self.form == "potential_bump":
            c = self.center
            u = sum((s - ci) ** 2 for s, ci in zip(symbols, c)) / self.radius**2
            return sp.Piecewise(
                (self.amplitude * sp.exp(-1 / (1 - u)), u < 1), (0, True)
            )
        if self.form == "analytic":
            if self.w_poly is not None:
                return sum(c * symbols[0] ** k for k, c in enumerate(self.w_poly))
            if len(self.m_const) == 1:
                return self.m_const[0] * symbols[0]
        raise ValueError("perturbation has no potential W")


@dataclass(frozen=True)
class DiffusionMatrix:
    """Constant nonsingular noise matrix sigma (d x d)."""

    entries: tuple

    @classmethod
    def from_array(cls, sigma) -> "DiffusionMatrix":
        arr = np.atleast_2d(np.asarray(sigma, dtype=float))
        m = cls(tuple(map(tuple, arr)))
        m.validate()
        return m

    @classmethod
    def identity(cls, dim: int) -> "DiffusionMatrix":
        return cls.from_array(np.eye(dim))

    @classmethod
    def scalar(cls, s: float, dim: int = 1) -> "DiffusionMatrix":
        return cls.from_array(s * np.eye(dim))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def ssT(self) -> np.ndarray:
        a = self.array
        return a @ a.T

    def validate(self) -> None:
        a = self.array
        if a.shape[0] != a.shape[1]:
            raise SingularSigma("sigma must be square")
        if abs(np.linalg.det(a)) <= 1e-12:
            raise SingularSigma("sigma is numerically singular")
        eigs = np.linalg.eigvalsh(self.ssT)
        if np.min(eigs) <= 0:
            raise SingularSigma("sigma sigma^T is not positive definite")


CONFIG_SPACE = "config_space"
PHASE_SPACE = "phase_space"
GLE_SPACE = "gle_space"


@dataclass(frozen=True)
class GibbsMeasure:
    """Normalized Gibbs measure exp(-beta V)/Z on the configuration space,
    optionally lifted to phase space (x Gaussian momenta) or GLE space
    (x Gaussian momenta x Gaussian memory variable)."""

    potential: Potential
    beta: float
    logZ: float
    kind: str = CONFIG_SPACE
    grid: object = None

    def density(self, q) -> np.ndarray:
        """Configuration-space marginal density."""
        return np.exp(-self.beta * self.potential.evaluate(q) - self.logZ)

    def log_density(self, q) -> np.ndarray:
        return -self.beta * self.potential.evaluate(q) - self.logZ

    def _gauss(self, p) -> np.ndarray:
        p = _points(p, self.potential.dim)
        d = p.shape[-1]
        norm = (self.beta / (2.0 * np.pi)) ** (d / 2.0)
        return norm * np.exp(-0.5 * self.beta * np.sum(p * p, axis=-1))

    def phase_density(self, q, p) -> np.ndarray:
        if self.kind == CONFIG_SPACE:
            raise ValueError("not a phase-space measure")
        return self.density(q) * self._gauss(p)

    def gle_density(self, q, p, z) -> np.ndarray:
        if self.kind != GLE_SPACE:
            raise ValueError("not a GLE-space measure")
        return self.density(q) * self._gauss(p) * self._gauss(z)

    def lift(self, kind: str) -> "GibbsMeasure":
        """Lift the configuration measure to phase or GLE space."""
        return GibbsMeasure(self.potential, self.beta, self.logZ, kind, self.grid)


def gibbs_normalize(potential: Potential, beta: float, grid) -> GibbsMeasure:
    """Normalize exp(-beta V) on the grid by composite Simpson quadrature.

    Raises NonConfining when the quadrature tail (outermost nodes) carries
    more than 1e-6 of the total weight, i.e. the grid does not contain the
    mass or the weight is not integrable.
    """
    if isinstance(grid, Grid1D):
        if potential.dim != 1:
            raise ValueError("1D grid requires a 1D potential")
        v = potential.evaluate(grid.nodes)
        vmin = float(np.min(v))
        w = np.exp(-beta * (v - vmin))
        total = simpson_1d(w, grid)
        tail = (np.sum(w[:3]) + np.sum(w[-3:])) * grid.h
    elif isinstance(grid, Grid2D):
        if potential.dim != 2:
            raise ValueError("2D grid requires a 2D potential")
        qx, qy = np.meshgrid(grid.x.nodes, grid.y.nodes, indexing="ij")
        pts = np.stack([qx, qy], axis=-1)
        v = potential.evaluate(pts)
        vmin = float(np.min(v))
        w = np.exp(-beta * (v - vmin))
        total = simpson_2d(w, grid)
        edge = np.concatenate([w[0], w[-1], w[:, 0], w[:, -1]])
        tail = np.sum(edge) * grid.cell_area
    else:
        raise TypeError("grid must be Grid1D or Grid2D")
    if not np.isfinite(total) or total <= 0:
        raise NonConfining("Gibbs weight not integrable on the grid")
    if tail / total > 1e-6:
        raise NonConfining("Gibbs weight has non-negligible mass at the grid boundary")
    logZ = float(np.log(total) - beta * vmin)
    return GibbsMeasure(potential, float(beta), logZ, CONFIG_SPACE, grid)


def conjugate_observable_overdamped(
    pert: PerturbationSpec, potential: Potential, sigma: DiffusionMatrix
) -> Callable[[np.ndarray], np.ndarray]:
    """Observable h with E[h(q_0) phi(q_s)] equal to the response integrand.

    Integration by parts against the Gibbs density turns the force-gradient
    pairing into a plain correlation:
        h(q) = (sig sig^T M) . grad V - div(sig sig^T M).
    For gradient-form M the Gibbs average of h vanishes.
    """
    ss = sigma.ssT

    def h(q: np.ndarray) -> np.ndarray:
        q = _points(q, potential.dim)
        m = pert.m_value(q)
        gv = potential.gradient(q)
        drift_part = np.einsum("...i,ij,...j->...", m, ss, gv)
        jac = pert.m_jacobian(q)  # (..., i, j) = d_i M_j
        div_part = np.einsum("ij,...ij->...", ss, jac)
        return drift_part - div_part

    return h


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-radius probe results for the confinement and curvature-margin
    conditions. Probes sample spheres at the probe radius and twice it; no
    claim is made about true limits at infinity."""

    alpha: float
    probe_radius: float
    drift_decay_value: float       # max of -q.grad V / |q|^(alpha+1) over both spheres
    drift_decay_pass: bool         # < 0 required
    curvature_margin_value: float  # min of |sig^T grad V|^2 - 2 tr(sig sig^T hess V), near sphere
    curvature_margin_far: float    # same quantity at twice the radius
    curvature_margin_pass: bool    # positive at both radii and not collapsing toward 0
    passed: bool


def _sphere_points(radius: float, dim: int, n: int = 64, seed: int = 1) -> np.ndarray:
    if dim == 1:
        return np.array([[-radius], [radius]])
    if dim == 2:
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = rng.standard_normal((n, dim))
    return radius * u / np.linalg.norm(u, axis=-1, keepdims=True)


def verify_assumptions(
    potential: Potential,
    sigma: DiffusionMatrix,
    alpha: float,
    probe_radius: float,
) -> AssumptionReport:
    """Numerically probe the standing drift-decay and curvature-margin
    assumptions on spheres of radius R and 2R (R = probe_radius >= 5)."""
    if probe_radius < 5:
        raise ValueError("probe_radius must be >= 5")
    hess = getattr(potential, "hessian", None)
    if hess is None:
        raise MissingHessian("curvature-margin probe needs second derivatives")
    ss = sigma.ssT
    sT = sigma.array.T

    def drift_decay(r):
        pts = _sphere_points(r, potential.dim)
        g = potential.gradient(pts)
        return float(np.max(-np.sum(pts * g, axis=-1) / r ** (alpha + 1.0)))

    def margin(r):
        pts = _sphere_points(r, potential.dim)
        g = potential.gradient(pts)
        hq = hess(pts)
        grad_term = np.sum((g @ sT.T) ** 2, axis=-1)
        trace_term = 2.0 * np.einsum("ij,...ji->...", ss, hq)
        return float(np.min(grad_term - trace_term))

    a1 = max(drift_decay(probe_radius), drift_decay(2.0 * probe_radius))
    pass1 = a1 < 0.0
    m_near = margin(probe_radius)
    m_far = margin(2.0 * probe_radius)
    # a positive liminf shows up as values bounded away from zero; a margin
    # that collapses under radius doubling indicates decay to zero
    pass2 = m_near > 0.0 and m_far > 0.0 and m_far >= 0.5 * m_near
    return AssumptionReport(
        alpha=float(alpha),
        probe_radius=float(probe_radius),
        drift_decay_value=a1,
        drift_decay_pass=pass1,
        curvature_margin_value=m_near,
        curvature_margin_far=m_far,
        curvature_margin_pass=pass2,
        passed=pass1 and pass2,
    )
