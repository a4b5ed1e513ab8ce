"""Observables as symbolic expressions, with analytic generator application.

Observables are sympy expressions in the state variables of the chosen
dynamics (q1..qd; plus p1..pd for underdamped; plus z1..zd for GLE). The
backward generator is applied symbolically, so correlation chains such as
the transport integrals use exact derivatives of polynomial observables
instead of numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .model import DiffusionMatrix, PerturbationSpec, Potential

OVERDAMPED = "overdamped"
UNDERDAMPED = "underdamped"
GLE = "gle"

_BLOCKS = {OVERDAMPED: ("q",), UNDERDAMPED: ("q", "p"), GLE: ("q", "p", "z")}


def state_symbols(dynamics: str, dim: int) -> tuple[sp.Symbol, ...]:
    """Symbols in state order, e.g. (q1, p1) for 1D underdamped."""
    names = []
    for block in _BLOCKS[dynamics]:
        names += [f"{block}{i + 1}" for i in range(dim)]
    return sp.symbols(names)


@dataclass(frozen=True)
class ObservableSpec:
    """A scalar observable on the state space of one dynamics."""

    expr: sp.Expr
    dynamics: str
    dim: int
    kind: str = "polynomial"
    _fn: object = field(default=None, repr=False, compare=False)

    @classmethod
    def from_string(cls, text: str, dynamics: str, dim: int = 1,
                    kind: str = "polynomial") -> "ObservableSpec":
        syms = state_symbols(dynamics, dim)
        expr = sp.sympify(text, locals={str(s): s for s in syms})
        return cls(sp.expand(expr), dynamics, dim, kind)

    @classmethod
    def bump(cls, pert: PerturbationSpec, dynamics: str, dim: int = 1) -> "ObservableSpec":
        syms = state_symbols(dynamics, dim)
        return cls(pert.w_sympy(syms[:dim]), dynamics, dim, kind="bump")

    @property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return state_symbols(self.dynamics, self.dim)

    def _callable(self):
        fn = sp.lambdify(self.symbols, self.expr, modules="numpy")
        object.__setattr__(self, "_fn", fn)
        return fn

    def values(self, states: np.ndarray) -> np.ndarray:
        """Evaluate on states of shape (..., state_dim)."""
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != len(self.symbols):
            raise ValueError("state dimension mismatch")
        fn = self._fn or self._callable()
        out = fn(*(states[..., i] for i in range(states.shape[-1])))
        return np.broadcast_to(np.asarray(out, dtype=float), states.shape[:-1]).copy()

    def flip_momentum(self) -> "ObservableSpec":
        """Parity-reverse the odd (momentum) variables: p -> -p, z unchanged."""
        syms = self.symbols
        subs = {s: -s for s in syms if str(s).startswith("p")}
        return ObservableSpec(sp.expand(self.expr.subs(subs, simultaneous=True)),
                              self.dynamics, self.dim, self.kind)

    def __add__(self, other):
        o = other.expr if isinstance(other, ObservableSpec) else other
        return ObservableSpec(sp.expand(self.expr + o), self.dynamics, self.dim, self.kind)

    def __mul__(self, other):
        o = other.expr if isinstance(other, ObservableSpec) else other
        return ObservableSpec(sp.expand(self.expr * o), self.dynamics, self.dim, self.kind)


def position(dynamics: str, dim: int = 1, axis: int = 0) -> ObservableSpec:
    return ObservableSpec.from_string(f"q{axis + 1}", dynamics, dim)


def momentum(dynamics: str, dim: int = 1, axis: int = 0) -> ObservableSpec:
    return ObservableSpec.from_string(f"p{axis + 1}", dynamics, dim)


def apply_generator(
    obs: ObservableSpec,
    potential: Potential,
    sigma: DiffusionMatrix | None = None,
    beta: float = 1.0,
    alpha: float | None = None,
    pert: PerturbationSpec | None = None,
) -> ObservableSpec:
    """Apply the backward generator of the unperturbed dynamics symbolically.

    With ``pert`` given, applies the generator of the dynamics whose potential
    is V - epsilon*W instead (gradient perturbations only); this is what the
    perturbed-equilibrium consistency checks use.
    """
    d = obs.dim
    syms = obs.symbols
    q = syms[:d]
    v_expr = potential.sympy_expr(q)
    if pert is not None:
        if not pert.is_gradient:
            raise ValueError("generator with perturbation requires gradient form")
        v_expr = v_expr - pert.epsilon * pert.w_sympy(q)
    grad_v = [sp.diff(v_expr, s) for s in q]
    f = obs.expr

    if obs.dynamics == OVERDAMPED:
        ss = (sigma or DiffusionMatrix.identity(d)).ssT
        out = 0
        for i in range(d):
            drift = -sum(ss[i, j] * grad_v[j] for j in range(d))
            out += drift * sp.diff(f, q[i])
            for j in range(d):
                out += ss[i, j] / beta * sp.diff(f, q[i], q[j])
    elif obs.dynamics == UNDERDAMPED:
        p = syms[d:2 * d]
        ss = (sigma or DiffusionMatrix.identity(d)).ssT
        out = 0
        for i in range(d):
            out += p[i] * sp.diff(f, q[i]) - grad_v[i] * sp.diff(f, p[i])
            out -= sum(ss[i, j] * p[j] for j in range(d)) * sp.diff(f, p[i])
            for j in range(d):
                out += ss[i, j] / beta * sp.diff(f, p[i], p[j])
    elif obs.dynamics == GLE:
        if alpha is None:
            raise ValueError("GLE generator needs the memory rate alpha")
        p = syms[d:2 * d]
        z = syms[2 * d:3 * d]
        out = 0
        for i in range(d):
            out += p[i] * sp.diff(f, q[i])
            out += (-grad_v[i] + z[i]) * sp.diff(f, p[i])
            out += (-alpha * z[i] - p[i]) * sp.diff(f, z[i])
            out += alpha / beta * sp.diff(f, z[i], z[i])
    else:
        raise ValueError(f"unknown dynamics {obs.dynamics!r}")
    return ObservableSpec(sp.expand(out), obs.dynamics, d, kind="generator_applied")
