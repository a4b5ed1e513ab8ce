"""Trajectory ensembles for overdamped, underdamped, and generalized
Langevin dynamics with reproducible per-path randomness.

Randomness layout: every path owns a counter-based Philox stream keyed by
(seed, path_index). A path's draws are therefore independent of n_paths and
of the block partitioning, and paired perturbed/unperturbed runs with the
same seed consume bit-identical initial conditions and Brownian increments
(the common-random-numbers contract used by the response estimators).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import kstwobign

from .errors import BlowUp, EnvelopeRejectionStall, NoiseStreamMismatch
from .grids import Grid1D
from .model import (
    CONFIG_SPACE,
    GLE_SPACE,
    PHASE_SPACE,
    QUADRATIC,
    DiffusionMatrix,
    GibbsMeasure,
    PerturbationSpec,
    Potential,
)

BLOWUP_THRESHOLD = 1e8
_BLOCK_FLOAT_BUDGET = 16_000_000  # cap on per-block pre-generated noise floats

OVERDAMPED = "overdamped"
UNDERDAMPED = "underdamped"
GLE_AUGMENTED = "gle_augmented"
GLE_CONVOLUTION = "gle_convolution"


@dataclass(frozen=True)
class SimConfig:
    """Time grid and ensemble size for one simulation run."""

    dt: float
    n_steps: int
    n_paths: int
    seed: int
    burn_in_steps: int = 0
    record_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("dt, n_steps, n_paths must be positive")
        if self.burn_in_steps < 0:
            raise ValueError("burn_in_steps must be non-negative")
        if self.n_steps % self.record_stride != 0:
            raise ValueError("record_stride must divide n_steps")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_stride + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_records) * (self.dt * self.record_stride)


@dataclass(frozen=True)
class Ensemble:
    """Recorded trajectories on a shared time grid.

    states has shape (n_paths, n_records, state_dim) where state_dim is
    d (overdamped), 2d (underdamped: q then p), or 3d (GLE: q, p, z).
    """

    times: np.ndarray
    states: np.ndarray
    dynamics_tag: str
    epsilon: float
    seed: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.states)):
            raise ValueError("ensemble contains non-finite states")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def component(self, idx: int) -> np.ndarray:
        return self.states[:, :, idx]


def path_generator(seed: int, path: int) -> np.random.Generator:
    """The counter-based stream owned by one path."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF, int(path))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=key)))


def _path_blocks(n_paths: int, per_path_floats: int):
    block = max(64, min(8192, _BLOCK_FLOAT_BUDGET // max(per_path_floats, 1)))
    starts = range(0, n_paths, block)
    return [(s, min(s + block, n_paths)) for s in starts]


def _rejection_sample_1d(gen, potential: Potential, beta: float, size: int,
                         grid: Grid1D | None) -> np.ndarray:
    """Vectorized rejection sampling from exp(-beta V)/Z in one dimension."""
    grid = grid or Grid1D(-10.0, 10.0, 2048)
    x = grid.centers
    v = potential.evaluate(x)
    t = np.exp(-beta * (v - v.min()))
    mass = t.sum()
    mu = float((x * t).sum() / mass)
    sd = float(np.sqrt(((x - mu) ** 2 * t).sum() / mass))
    s = 3.0 * sd
    env = np.exp(-0.5 * ((x - mu) / s) ** 2)
    c = 1.05 * float(np.max(t / env))

    out = np.empty(size)
    filled = 0
    drawn = 0
    while filled < size:
        m = max(1024, 2 * (size - filled))
        y = mu + s * gen.standard_normal(m)
        u = gen.random(m)
        vy = potential.evaluate(y)
        ty = np.exp(-beta * (vy - v.min()))
        ey = np.exp(-0.5 * ((y - mu) / s) ** 2)
        acc = u * c * ey <= ty
        k = min(int(acc.sum()), size - filled)
        out[filled:filled + k] = y[acc][:k]
        filled += k
        drawn += m
        if drawn > 64 and filled / drawn < 1e-4:
            raise EnvelopeRejectionStall("rejection acceptance rate below 1e-4")
    return out


def _draw_config_init(gen, potential: Potential, beta: float, grid) -> np.ndarray:
    d = potential.dim
    if potential.kind == QUADRATIC:
        (k,) = potential.params
        return gen.standard_normal(d) / np.sqrt(beta * k)
    # separable non-Gaussian kinds sample componentwise
    return np.array([
        _rejection_sample_1d(gen, _component_potential(potential), beta, 1, grid)[0]
        for _ in range(d)
    ])


def _component_potential(potential: Potential) -> Potential:
    if potential.dim == 1:
        return potential
    return Potential(potential.kind, potential.params, 1, table=potential.table)


def sample_gibbs(measure: GibbsMeasure, n: int, seed: int) -> np.ndarray:
    """Draw n states from a Gibbs measure (exact for quadratic potentials,
    Gaussian-envelope rejection otherwise); momenta and memory coordinates
    are exact normals."""
    gen = path_generator(seed, 0)
    pot = measure.potential
    d = pot.dim
    if pot.kind == QUADRATIC:
        (k,) = pot.params
        q = gen.standard_normal((n, d)) / np.sqrt(measure.beta * k)
    else:
        cols = [
            _rejection_sample_1d(gen, _component_potential(pot), measure.beta, n,
                                 measure.grid if isinstance(measure.grid, Grid1D) else None)
            for _ in range(d)
        ]
        q = np.stack(cols, axis=-1)
    parts = [q]
    if measure.kind in (PHASE_SPACE, GLE_SPACE):
        parts.append(gen.standard_normal((n, d)) / np.sqrt(measure.beta))
    if measure.kind == GLE_SPACE:
        parts.append(gen.standard_normal((n, d)) / np.sqrt(measure.beta))
    return np.concatenate(parts, axis=-1)


def _init_state(gen, init, potential, beta, n_momentum_blocks: int, grid=None, path=0):
    """Initial state for one path; 'gibbs' consumes the path stream; an
    (n_paths, state_dim) array supplies explicit per-path states."""
    d = potential.dim
    want = d * (1 + n_momentum_blocks)
    if isinstance(init, str) and init == "gibbs":
        parts = [_draw_config_init(gen, potential, beta, grid)]
        for _ in range(n_momentum_blocks):
            parts.append(gen.standard_normal(d) / np.sqrt(beta))
        return np.concatenate(parts)
    arr = np.asarray(init, dtype=float)
    if arr.ndim == 2:
        if arr.shape[1] != want:
            raise ValueError(f"per-path init needs {want} coordinates")
        return arr[path]
    arr = arr.ravel()
    if arr.size != want:
        raise ValueError(f"point init needs {want} coordinates")
    return arr


def _check_blowup(state: np.ndarray) -> None:
    if np.max(np.abs(state)) > BLOWUP_THRESHOLD:
        raise BlowUp("state exceeded 1e8; reduce dt for this potential")


def _run_blocks(cfg: SimConfig, state_dim: int, one_block, threads: int | None):
    states = np.empty((cfg.n_paths, cfg.n_records, state_dim))
    blocks = _path_blocks(cfg.n_paths, (cfg.burn_in_steps + cfg.n_steps))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda ab: one_block(states, *ab), blocks))
    else:
        for a, b in blocks:
            one_block(states, a, b)
    return states


def simulate_overdamped(
    potential: Potential,
    sigma: DiffusionMatrix,
    pert: PerturbationSpec | None,
    cfg: SimConfig,
    init="gibbs",
    *,
    force_override=None,
    grid: Grid1D | None = None,
    threads: int | None = None,
) -> Ensemble:
    """Euler-Maruyama ensemble for
    dq = sig sig^T (-grad V + eps M) dt + sqrt(2) sig dB.

    force_override(q) replaces the whole force -grad V + eps M (used for
    non-gradient drifts such as rotational fields)."""
    d = potential.dim
    ss = sigma.ssT
    sig = sigma.array
    eps = pert.epsilon if pert is not None else 0.0
    total = cfg.burn_in_steps + cfg.n_steps
    root = np.sqrt(2.0 * cfg.dt)

    def drift(q):
        if force_override is not None:
            return np.asarray(force_override(q), dtype=float) @ ss.T
        f = -potential.gradient(q)
        if pert is not None and eps != 0.0:
            f = f + eps * pert.m_value(q)
        return f @ ss.T

    def one_block(states, a, b):
        n = b - a
        q = np.empty((n, d))
        noise = np.empty((n, total, d))
        for i in range(n):
            gen = path_generator(cfg.seed, a + i)
            q[i] = _init_state(gen, init, potential, 1.0, 0, grid, a + i)
            noise[i] = gen.standard_normal((total, d))
        noise = noise @ (root * sig.T)
        rec = 0
        for k in range(total):
            if k >= cfg.burn_in_steps and (k - cfg.burn_in_steps) % cfg.record_stride == 0:
                states[a:b, rec] = q
                rec += 1
            q += drift(q) * cfg.dt + noise[:, k]
        states[a:b, rec] = q
        _check_blowup(q)

    states = _run_blocks(cfg, d, one_block, threads)
    return Ensemble(cfg.times, states, OVERDAMPED, eps, cfg.seed)


def _baoab_matrices(sigma: DiffusionMatrix, beta: float, dt: float):
    gamma = sigma.ssT
    w, vecs = np.linalg.eigh(gamma)
    e = vecs @ np.diag(np.exp(-w * dt)) @ vecs.T
    cvar = (1.0 - np.exp(-2.0 * w * dt)) / beta
    s = vecs @ np.diag(np.sqrt(cvar)) @ vecs.T
    return e, s


def simulate_underdamped(
    potential: Potential,
    sigma: DiffusionMatrix,
    pert_potential: PerturbationSpec | None,
    cfg: SimConfig,
    init="gibbs",
    *,
    beta: float = 1.0,
    zero_noise: bool = False,
    force_override=None,
    grid: Grid1D | None = None,
    threads: int | None = None,
) -> Ensemble:
    """BAOAB ensemble for
    dq = p dt,  dp = -grad(V - eps W) dt - sig sig^T p dt + sqrt(2/beta) sig dB.

    The O substep uses the exact matrix-exponential update of the momentum
    Ornstein-Uhlenbeck process; zero_noise replaces it by the identity,
    giving the symplectic velocity-Verlet limit. force_override(q) replaces
    the position force entirely.
    """
    d = potential.dim
    eps = pert_potential.epsilon if pert_potential is not None else 0.0
    if pert_potential is not None and not pert_potential.is_gradient:
        raise ValueError("underdamped perturbation must be of potential form")
    e_mat, s_mat = _baoab_matrices(sigma, beta, cfg.dt)
    total = cfg.burn_in_steps + cfg.n_steps
    half = 0.5 * cfg.dt

    def force(q):
        if force_override is not None:
            return np.asarray(force_override(q), dtype=float)
        f = -potential.gradient(q)
        if pert_potential is not None and eps != 0.0:
            f = f + eps * pert_potential.w_gradient(q)
        return f

    def one_block(states, a, b):
        n = b - a
        x = np.empty((n, 2 * d))
        noise = np.empty((n, total, d))
        for i in range(n):
            gen = path_generator(cfg.seed, a + i)
            x[i] = _init_state(gen, init, potential, beta, 1, grid, a + i)
            noise[i] = gen.standard_normal((total, d))
        q, p = x[:, :d].copy(), x[:, d:].copy()
        rec = 0
        for k in range(total):
            if k >= cfg.burn_in_steps and (k - cfg.burn_in_steps) % cfg.record_stride == 0:
                states[a:b, rec, :d] = q
                states[a:b, rec, d:] = p
                rec += 1
            p += half * force(q)
            q += half * p
            if not zero_noise:
                p = p @ e_mat.T + noise[:, k] @ s_mat.T
            q += half * p
            p += half * force(q)
        states[a:b, rec, :d] = q
        states[a:b, rec, d:] = p
        _check_blowup(q)

    states = _run_blocks(cfg, 2 * d, one_block, threads)
    return Ensemble(cfg.times, states, UNDERDAMPED, eps, cfg.seed)


def simulate_gle_augmented(
    potential: Potential,
    alpha: float,
    beta: float,
    pert: PerturbationSpec | None,
    cfg: SimConfig,
    init="gibbs",
    *,
    zero_noise: bool = False,
    noise_replay: np.ndarray | None = None,
    force_override=None,
    grid: Grid1D | None = None,
    threads: int | None = None,
) -> Ensemble:
    """Euler-Maruyama ensemble for the Markovian (q, p, z) form of the
    exponential-memory generalized Langevin dynamics:
    dq = p dt, dp = (-grad(V - eps W) + z) dt,
    dz = -(alpha z + p) dt + sqrt(2 alpha / beta) dB."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = potential.dim
    eps = pert.epsilon if pert is not None else 0.0
    if pert is not None and not pert.is_gradient:
        raise ValueError("GLE perturbation must be of potential form")
    total = cfg.burn_in_steps + cfg.n_steps
    amp = np.sqrt(2.0 * alpha / beta * cfg.dt)
    if noise_replay is not None and noise_replay.shape[1] != total:
        raise NoiseStreamMismatch("noise stream length must equal step count")

    def force(q):
        if force_override is not None:
            return np.asarray(force_override(q), dtype=float)
        f = -potential.gradient(q)
        if pert is not None and eps != 0.0:
            f = f + eps * pert.w_gradient(q)
        return f

    def one_block(states, a, b):
        n = b - a
        x = np.empty((n, 3 * d))
        noise = np.empty((n, total, d))
        for i in range(n):
            gen = path_generator(cfg.seed, a + i)
            x[i] = _init_state(gen, init, potential, beta, 2, grid, a + i)
            noise[i] = gen.standard_normal((total, d))
        if noise_replay is not None:
            noise = noise_replay[a:b]
        if zero_noise:
            noise = np.zeros_like(noise)
        q = x[:, :d].copy()
        p = x[:, d:2 * d].copy()
        z = x[:, 2 * d:].copy()
        rec = 0
        for k in range(total):
            if k >= cfg.burn_in_steps and (k - cfg.burn_in_steps) % cfg.record_stride == 0:
                states[a:b, rec, :d] = q
                states[a:b, rec, d:2 * d] = p
                states[a:b, rec, 2 * d:] = z
                rec += 1
            dq = p * cfg.dt
            dp = (force(q) + z) * cfg.dt
            dz = -(alpha * z + p) * cfg.dt + amp * noise[:, k]
            q += dq
            p += dp
            z += dz
        states[a:b, rec, :d] = q
        states[a:b, rec, d:2 * d] = p
        states[a:b, rec, 2 * d:] = z
        _check_blowup(q)

    states = _run_blocks(cfg, 3 * d, one_block, threads)
    return Ensemble(cfg.times, states, GLE_AUGMENTED, eps, cfg.seed)


def simulate_gle_convolution(
    potential: Potential,
    alpha: float,
    beta: float,
    pert: PerturbationSpec | None,
    cfg: SimConfig,
    init,
    noise_replay: np.ndarray,
) -> Ensemble:
    """Direct integration of the memory form of the GLE:
    q'' = -grad(V - eps W) - int_0^t exp(-alpha (t-s)) q'(s) ds + f(t),
    with the memory integral accumulated by the trapezoid rule and the
    Ornstein-Uhlenbeck forcing f stepped exactly on the replayed noise.

    init must be a (n_paths, 3d) array of (q, p, z=f(0)) states so the run
    can be paired against simulate_gle_augmented on the same noise. The
    recorded third block is the reconstructed memory state z = f - I.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = potential.dim
    eps = pert.epsilon if pert is not None else 0.0
    if pert is not None and not pert.is_gradient:
        raise ValueError("GLE perturbation must be of potential form")
    if cfg.burn_in_steps:
        raise ValueError("convolution mode does not support burn-in")
    noise_replay = np.asarray(noise_replay, dtype=float)
    if noise_replay.shape != (cfg.n_paths, cfg.n_steps, d):
        raise NoiseStreamMismatch("noise stream must have shape (n_paths, n_steps, dim)")
    init = np.asarray(init, dtype=float)
    if init.shape != (cfg.n_paths, 3 * d):
        raise ValueError("init must be an (n_paths, 3d) state array")

    decay = np.exp(-alpha * cfg.dt)
    f_amp = np.sqrt((1.0 - decay**2) / beta)

    def force(q):
        f = -potential.gradient(q)
        if pert is not None and eps != 0.0:
            f = f + eps * pert.w_gradient(q)
        return f

    q = init[:, :d].copy()
    p = init[:, d:2 * d].copy()
    f_ou = init[:, 2 * d:].copy()
    mem = np.zeros_like(p)  # I(t) = int_0^t exp(-alpha(t-s)) p(s) ds
    states = np.empty((cfg.n_paths, cfg.n_records, 3 * d))
    rec = 0
    for k in range(cfg.n_steps + 1):
        if k % cfg.record_stride == 0:
            states[:, rec, :d] = q
            states[:, rec, d:2 * d] = p
            states[:, rec, 2 * d:] = f_ou - mem
            rec += 1
        if k == cfg.n_steps:
            break
        acc = force(q) - mem + f_ou
        p_new = p + acc * cfg.dt
        q += p * cfg.dt
        mem = decay * mem + 0.5 * cfg.dt * (decay * p + p_new)
        p = p_new
        f_ou = decay * f_ou + f_amp * noise_replay[:, k]
    _check_blowup(q)
    return Ensemble(cfg.times, states, GLE_CONVOLUTION, eps, cfg.seed)


def gle_pair(
    potential: Potential,
    alpha: float,
    beta: float,
    pert: PerturbationSpec | None,
    cfg: SimConfig,
    init="gibbs",
    *,
    grid: Grid1D | None = None,
) -> tuple[Ensemble, Ensemble]:
    """Run the augmented and convolution forms on identical noise and
    identical initial states (z(0) = f(0)); used for the pathwise
    equivalence measurements."""
    d = potential.dim
    x0 = np.empty((cfg.n_paths, 3 * d))
    noise = np.empty((cfg.n_paths, cfg.n_steps, d))
    for i in range(cfg.n_paths):
        gen = path_generator(cfg.seed, i)
        x0[i] = _init_state(gen, init, potential, beta, 2, grid)
        noise[i] = gen.standard_normal((cfg.n_steps, d))
    aug = simulate_gle_augmented(
        potential, alpha, beta, pert, cfg, init, noise_replay=noise, grid=grid
    )
    conv = simulate_gle_convolution(potential, alpha, beta, pert, cfg, x0, noise)
    return aug, conv


def ks_statistic_against_quadrature(samples: np.ndarray, potential: Potential,
                                    beta: float, grid: Grid1D) -> float:
    """One-sample KS statistic of 1D samples against the quadrature CDF."""
    x = grid.nodes
    w = np.exp(-beta * (potential.evaluate(x) - potential.evaluate(x).min()))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    s = np.sort(samples)
    f = np.interp(s, x, cdf)
    n = len(s)
    up = np.max(np.arange(1, n + 1) / n - f)
    lo = np.max(f - np.arange(0, n) / n)
    return float(max(up, lo))


def ks_critical(n: int, level: float = 0.01) -> float:
    """Critical KS value at the given level (asymptotic Kolmogorov law)."""
    return float(kstwobign.ppf(1.0 - level) / np.sqrt(n))
