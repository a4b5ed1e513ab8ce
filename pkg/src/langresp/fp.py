"""Grid-based Fokker-Planck solvers.

1D position-space solver: exponentially fitted (Scharfetter-Gummel) finite
volumes. Face ratios use exact potential differences between cell centers,
which makes the cell-sampled Gibbs density an exact discrete steady state
for gradient drifts: the detailed-balance equivalence becomes a
machine-precision statement rather than an O(h^2) one.

2D kinetic solver: conservative second-order upwind transport in (q, p)
plus Scharfetter-Gummel collision in p, stepped IMEX (explicit transport,
implicit collision).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .errors import (
    GridTooCoarse,
    LinearSolveFailure,
    NonConvergence,
    WindowTooShort,
)
from .grids import Grid1D, Grid2D
from .model import DiffusionMatrix, PerturbationSpec, Potential

MASS_TOL = 1e-10
PECLET_LIMIT = 50.0


def bernoulli(x: np.ndarray) -> np.ndarray:
    """B(x) = x / (exp(x) - 1), stable near zero."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-8
    xs = x[small]
    out[small] = 1.0 - xs / 2.0 + xs**2 / 12.0
    xb = x[~small]
    out[~small] = xb / np.expm1(xb)
    return out


@dataclass
class DensityField:
    """Cell-averaged probability density on a grid."""

    grid: object
    values: np.ndarray
    time: float = 0.0

    @property
    def cell_measure(self) -> float:
        return self.grid.h if isinstance(self.grid, Grid1D) else self.grid.cell_area

    def mass(self) -> float:
        return float(np.sum(self.values) * self.cell_measure)

    def normalized(self) -> "DensityField":
        return DensityField(self.grid, self.values / self.mass(), self.time)


def l1_distance(a: DensityField, b: DensityField) -> float:
    return float(np.sum(np.abs(a.values - b.values)) * a.cell_measure)


def weighted_l2_distance(a: DensityField, ref: DensityField) -> float:
    """L2(1/ref) distance of a to ref."""
    w = np.maximum(ref.values, 1e-300)
    return float(np.sqrt(np.sum((a.values - ref.values) ** 2 / w) * a.cell_measure))


def relative_entropy(a: DensityField, ref: DensityField) -> float:
    w = np.maximum(ref.values, 1e-300)
    v = np.maximum(a.values, 0.0)
    mask = v > 0
    return float(np.sum(v[mask] * np.log(v[mask] / w[mask])) * a.cell_measure)


NORMS = {
    "l1": l1_distance,
    "l2_weighted": weighted_l2_distance,
    "entropy": relative_entropy,
}


def _face_log_ratio(potential, pert, grid: Grid1D) -> np.ndarray:
    """SG face drift integrals v_f (interior faces): exact potential
    differences for gradient parts, midpoint rule for general fields."""
    x = grid.centers
    vtil = potential.evaluate(x)
    eps = pert.epsilon if pert is not None else 0.0
    if pert is not None and eps != 0.0 and pert.is_gradient:
        vtil = vtil - eps * pert.w_value(x)
    v = -(vtil[1:] - vtil[:-1])
    if pert is not None and eps != 0.0 and not pert.is_gradient:
        faces = grid.nodes[1:-1]
        v = v + eps * grid.h * pert.m_value(faces)[:, 0]
    return v


@dataclass
class FPOperator1D:
    """Tridiagonal Scharfetter-Gummel generator on cell densities."""

    grid: Grid1D
    matrix: sparse.csc_matrix
    gibbs_values: np.ndarray            # unnormalized exp(-V_eff) at centers
    face_ratios: np.ndarray
    clip_warnings: int = 0
    _lu_cache: dict = field(default_factory=dict, repr=False)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def residual(self, values: np.ndarray) -> float:
        """Kernel residual, measured on the unit-sum (cell mass) scaling."""
        p = values / np.sum(values)
        return float(np.max(np.abs(self.matrix @ p)))

    def _lu(self, dt: float):
        key = round(dt, 15)
        if key not in self._lu_cache:
            n = self.grid.n
            a = sparse.identity(n, format="csc") - (dt / 2.0) * self.matrix
            self._lu_cache[key] = (splu(a), sparse.identity(n, format="csc") + (dt / 2.0) * self.matrix)
        return self._lu_cache[key]


def assemble_overdamped_fp(
    potential: Potential,
    sigma: DiffusionMatrix,
    pert: PerturbationSpec | None,
    grid: Grid1D,
) -> FPOperator1D:
    """Assemble d rho/dt = L rho for
    d rho/dt = d/dq [ sig^2 ( (V - eps W)' rho - eps M_gen rho + d rho/dq ) ].

    Columns of L sum to zero (discrete conservation); for gradient drifts the
    discrete Gibbs vector spans the kernel to machine precision.
    """
    if potential.dim != 1:
        raise ValueError("1D solver requires a 1D potential")
    d_coef = float(sigma.ssT[0, 0])
    h = grid.h
    v = _face_log_ratio(potential, pert, grid)
    if np.max(np.abs(v)) > PECLET_LIMIT:
        raise GridTooCoarse("cell Peclet number exceeds 50; refine the grid")
    scale = d_coef / h**2
    b_minus = bernoulli(-v) * scale   # multiplies left cell of each face
    b_plus = bernoulli(v) * scale     # multiplies right cell
    n = grid.n
    main = np.zeros(n)
    lower = np.zeros(n - 1)
    upper = np.zeros(n - 1)
    # face f sits between cells f and f+1 (f = 0..n-2)
    main[:-1] -= b_minus
    upper[:] += b_plus
    lower[:] += b_minus
    main[1:] -= b_plus
    mat = sparse.diags([lower, main, upper], [-1, 0, 1], format="csc")
    x = grid.centers
    veff = potential.evaluate(x)
    if pert is not None and pert.epsilon != 0.0 and pert.is_gradient:
        veff = veff - pert.epsilon * pert.w_value(x)
    gibbs = np.exp(-(veff - veff.min()))
    return FPOperator1D(grid, mat, gibbs, v)


def step_fp(op: FPOperator1D, rho: DensityField, dt: float) -> DensityField:
    """One Crank-Nicolson step; conserves mass to solver roundoff and clips
    negative undershoots below the -1e-14 tolerance (counted on the op)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lu, rhs_mat = op._lu(dt)
    out = lu.solve(rhs_mat @ rho.values)
    if not np.all(np.isfinite(out)):
        raise LinearSolveFailure("Crank-Nicolson solve returned non-finite values")
    neg = out < -1e-14 * np.max(np.abs(out))
    if np.any(neg):
        op.clip_warnings += 1
    out = np.maximum(out, 0.0) if np.any(out < 0) else out
    return DensityField(op.grid, out, rho.time + dt)


def stationary_solve(op: FPOperator1D, max_iter: int = 200, tol: float = 1e-11) -> DensityField:
    """Kernel vector of the generator by shifted inverse iteration,
    normalized to unit mass. Residuals are measured on the unit-sum vector."""
    sub = op.matrix.diagonal(-1)
    sup = op.matrix.diagonal(1)
    if np.min(sub) <= 0 or np.min(sup) <= 0:
        raise ValueError("operator not irreducible on the grid")
    n = op.grid.n
    shift = 1e-10 * float(np.max(np.abs(op.matrix.diagonal())))
    lu = splu((op.matrix - shift * sparse.identity(n, format="csc")).tocsc())
    x = op.gibbs_values / np.sum(op.gibbs_values)
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.sum(y)
        if op.residual(x) < tol:
            break
    else:
        raise NonConvergence("inverse iteration did not reach the residual target")
    if np.min(x) <= 0:
        raise NonConvergence("stationary density not positive")
    rho = x / (np.sum(x) * op.grid.h)
    return DensityField(op.grid, rho, 0.0)


def probability_flux(
    rho: DensityField,
    potential: Potential,
    sigma: DiffusionMatrix,
    pert: PerturbationSpec | None = None,
    drift_override=None,
):
    """Cell-face probability current j = b rho - sig sig^T grad rho, with
    b = sig sig^T (-grad V + eps M) unless drift_override(q) is supplied.
    Boundary faces carry zero flux. Returns an (n+1,) array in 1D or a
    (jx, jy) pair of face arrays in 2D; discretization is second order."""
    eps = pert.epsilon if pert is not None else 0.0

    def drift(pts):
        if drift_override is not None:
            return np.asarray(drift_override(pts), dtype=float)
        f = -potential.gradient(pts)
        if pert is not None and eps != 0.0:
            f = f + eps * pert.m_value(pts)
        return f @ sigma.ssT.T

    if isinstance(rho.grid, Grid1D):
        g = rho.grid
        d_coef = float(sigma.ssT[0, 0])
        faces = g.nodes[1:-1]
        u = drift(faces)[:, 0]
        mid = 0.5 * (rho.values[1:] + rho.values[:-1])
        grad = (rho.values[1:] - rho.values[:-1]) / g.h
        j = np.zeros(g.n + 1)
        j[1:-1] = u * mid - d_coef * grad
        return j

    g: Grid2D = rho.grid
    ss = sigma.ssT
    vals = rho.values
    nx, ny = g.shape
    hx, hy = g.x.h, g.y.h
    jx = np.zeros((nx + 1, ny))
    jy = np.zeros((nx, ny + 1))
    yc = g.y.centers
    xc = g.x.centers
    # x-faces (interior): average density, one-sided normal gradient,
    # centered tangential gradient
    xf = g.x.nodes[1:-1]
    pts = np.stack(np.meshgrid(xf, yc, indexing="ij"), axis=-1)
    b = drift(pts)
    mid = 0.5 * (vals[1:, :] + vals[:-1, :])
    ddx = (vals[1:, :] - vals[:-1, :]) / hx
    ddy_cells = np.gradient(vals, hy, axis=1)
    ddy = 0.5 * (ddy_cells[1:, :] + ddy_cells[:-1, :])
    jx[1:-1] = b[..., 0] * mid - ss[0, 0] * ddx - ss[0, 1] * ddy
    # y-faces
    yf = g.y.nodes[1:-1]
    pts = np.stack(np.meshgrid(xc, yf, indexing="ij"), axis=-1)
    b = drift(pts)
    mid = 0.5 * (vals[:, 1:] + vals[:, :-1])
    ddy = (vals[:, 1:] - vals[:, :-1]) / hy
    ddx_cells = np.gradient(vals, hx, axis=0)
    ddx = 0.5 * (ddx_cells[:, 1:] + ddx_cells[:, :-1])
    jy[:, 1:-1] = b[..., 1] * mid - ss[1, 0] * ddx - ss[1, 1] * ddy
    return jx, jy


def _upwind_matrix(n: int, velocities: np.ndarray, h: float) -> sparse.csr_matrix:
    """1D conservative second-order upwind d/dx(a rho) divergence matrix for
    per-row velocities (length n-1 face velocities), zero-flux boundaries.
    Returns the matrix whose action is -(F_{i+1/2} - F_{i-1/2}) / h."""
    rows, cols, data = [], [], []

    def add_flux(face, cell, coef):
        # flux at interior face `face` (between cells face, face+1)
        # contributes -coef/h to cell `face` and +coef/h to cell `face+1`
        rows.append(face)
        cols.append(cell)
        data.append(-coef / h)
        rows.append(face + 1)
        cols.append(cell)
        data.append(coef / h)

    for f in range(n - 1):
        a = velocities[f]
        if a >= 0:
            if f - 1 >= 0:
                add_flux(f, f, 1.5 * a)
                add_flux(f, f - 1, -0.5 * a)
            else:
                add_flux(f, f, a)
        else:
            if f + 2 <= n - 1:
                add_flux(f, f + 1, 1.5 * a)
                add_flux(f, f + 2, -0.5 * a)
            else:
                add_flux(f, f + 1, a)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _sg_collision_1d(p_centers: np.ndarray, h: float, d_coef: float) -> sparse.csr_matrix:
    """SG discretization of d/dp (D (p rho + d rho/dp)) on one p-column."""
    n = len(p_centers)
    v = -(p_centers[1:] ** 2 - p_centers[:-1] ** 2) / 2.0
    scale = d_coef / h**2
    bm = bernoulli(-v) * scale
    bp = bernoulli(v) * scale
    main = np.zeros(n)
    main[:-1] -= bm
    main[1:] -= bp
    return sparse.diags([bm, main, bp], [-1, 0, 1], format="csr")


@dataclass
class KineticOperator:
    """Kinetic Fokker-Planck operator on a (q, p) grid: transport (explicit
    part) plus momentum collision (implicit part)."""

    grid: Grid2D
    transport: sparse.csr_matrix
    collision: sparse.csr_matrix
    gibbs_values: np.ndarray
    _lu_cache: dict = field(default_factory=dict, repr=False)

    @property
    def matrix(self) -> sparse.csr_matrix:
        return (self.transport + self.collision).tocsr()

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (self.matrix @ values.ravel()).reshape(self.grid.shape)

    def residual(self, values: np.ndarray) -> float:
        p = values.ravel() / np.sum(values)
        return float(np.max(np.abs(self.matrix @ p)))

    def cfl_dt(self) -> float:
        pmax = float(np.max(np.abs(self.grid.y.centers)))
        return self.grid.x.h / pmax

    def _lu(self, dt: float):
        key = round(dt, 15)
        if key not in self._lu_cache:
            n = self.transport.shape[0]
            self._lu_cache[key] = splu(
                (sparse.identity(n, format="csc") - dt * self.collision.tocsc())
            )
        return self._lu_cache[key]


def assemble_kinetic_fp(
    potential: Potential,
    sigma: DiffusionMatrix,
    pert_potential: PerturbationSpec | None,
    grid: Grid2D,
) -> KineticOperator:
    """Assemble the kinetic operator for 1D configuration space:
    d rho/dt = -p d_q rho + (V - eps W)'(q) d_p rho + d_p(D(p rho + d_p rho)),
    with D = sig sig^T. Transport is linear second-order upwind (conservative,
    zero-flux box boundaries); collision is Scharfetter-Gummel in p."""
    if potential.dim != 1:
        raise ValueError("kinetic solver covers 1D configuration space")
    nx, ny = grid.shape
    d_coef = float(sigma.ssT[0, 0])
    qc = grid.x.centers
    pc = grid.y.centers

    veff_grad = potential.gradient(qc)[:, 0]
    if pert_potential is not None and pert_potential.epsilon != 0.0:
        if not pert_potential.is_gradient:
            raise ValueError("kinetic perturbation must be of potential form")
        veff_grad = veff_grad - pert_potential.epsilon * pert_potential.w_gradient(qc)[:, 0]

    pe = np.max(np.abs(pc[1:] ** 2 - pc[:-1] ** 2) / 2.0)
    if pe > PECLET_LIMIT:
        raise GridTooCoarse("momentum-space Peclet number exceeds 50")

    eye_x = sparse.identity(nx, format="csr")

    # q-transport: velocity p_j constant along q; one 1D operator per p value
    data, rows, cols = [], [], []
    for j in range(ny):
        a = np.full(nx - 1, pc[j])
        bcoo = _upwind_matrix(nx, a, grid.x.h).tocoo()
        rows.extend(bcoo.row * ny + j)
        cols.extend(bcoo.col * ny + j)
        data.extend(bcoo.data)
    t_q = sparse.csr_matrix((data, (rows, cols)), shape=(nx * ny, nx * ny))

    # p-transport: velocity -(V - eps W)'(q_i) constant along p
    data, rows, cols = [], [], []
    for i in range(nx):
        a = np.full(ny - 1, -veff_grad[i])
        bm = _upwind_matrix(ny, a, grid.y.h).tocoo()
        rows.extend(i * ny + bm.row)
        cols.extend(i * ny + bm.col)
        data.extend(bm.data)
    t_p = sparse.csr_matrix((data, (rows, cols)), shape=(nx * ny, nx * ny))

    collision_1d = _sg_collision_1d(pc, grid.y.h, d_coef)
    collision = sparse.kron(eye_x, collision_1d, format="csr")

    veff = potential.evaluate(qc)
    if pert_potential is not None and pert_potential.epsilon != 0.0:
        veff = veff - pert_potential.epsilon * pert_potential.w_value(qc)
    logw = -(veff[:, None] - veff.min()) - 0.5 * pc[None, :] ** 2
    gibbs = np.exp(logw)
    return KineticOperator(grid, (t_q + t_p).tocsr(), collision, gibbs)


def step_kinetic(op: KineticOperator, rho: DensityField, dt: float) -> DensityField:
    """IMEX step: explicit transport, implicit collision. dt must obey the
    transport CFL bound (op.cfl_dt())."""
    if dt > op.cfl_dt():
        raise ValueError("dt exceeds the transport CFL bound")
    lu = op._lu(dt)
    rhs = rho.values.ravel() + dt * (op.transport @ rho.values.ravel())
    out = lu.solve(rhs)
    if not np.all(np.isfinite(out)):
        raise LinearSolveFailure("kinetic IMEX solve returned non-finite values")
    return DensityField(op.grid, out.reshape(op.grid.shape), rho.time + dt)


@dataclass(frozen=True)
class RateFit:
    """Exponential decay fit of a distance series: value ~ exp(-rate t)."""

    rate: float
    intercept: float
    r_squared: float
    window: tuple
    norm_tag: str = "l1"
    n_points: int = 0


def fit_rate(
    times: np.ndarray,
    values: np.ndarray,
    norm_tag: str = "l1",
    se: np.ndarray | None = None,
    transient_fraction: float = 0.1,
) -> RateFit:
    """Least-squares fit of log(value) against t on an automatic window that
    drops the initial transient and the noise floor (machine floor, or 3*SE
    when standard errors accompany Monte Carlo input)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t0 = times[0] + transient_fraction * (times[-1] - times[0])
    keep = (values > 0) & (times >= t0)
    floor = 1e3 * np.finfo(float).eps * float(np.max(values))
    keep &= values > floor
    if se is not None:
        keep &= values > 3.0 * np.asarray(se)
    if np.count_nonzero(keep) < 10:
        raise WindowTooShort("fewer than 10 usable points in the fit window")
    t = times[keep]
    y = np.log(values[keep])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(
        rate=float(-slope),
        intercept=float(intercept),
        r_squared=r2,
        window=(float(t[0]), float(t[-1])),
        norm_tag=norm_tag,
        n_points=int(len(t)),
    )
