"""Initial data, exact solutions and error norms for the sine-wave test cases."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equations import Euler, LinearAdvection, NavierStokes, make_equation
from .operators import DiscreteSpace

CASE_NAMES = ("advection", "euler", "navier_stokes")


@dataclass(frozen=True)
class TestCase:
    """A periodic sine-wave problem on the square [-1, 1]^2.

    ``name`` selects the equation; ``params`` are forwarded to make_equation.
    """

    __test__ = False  # not a pytest class

    name: str
    params: dict = field(default_factory=dict)
    amplitude: float = 0.3
    velocity: tuple = (0.3, 0.3)

    def __post_init__(self):
        if self.name not in CASE_NAMES:
            raise ValueError(f"unknown case {self.name!r}; choose one of {CASE_NAMES}")

    def equation(self):
        params = dict(self.params)
        if self.name == "advection":
            params.setdefault("a", self.velocity)
        return make_equation(self.name, **params)

    @property
    def has_exact(self) -> bool:
        return self.name in ("advection", "euler")

    def _phase(self, X, Y, t, eq):
        if isinstance(eq, LinearAdvection):
            a1, a2 = eq.a
        else:
            a1, a2 = self.velocity
        return np.pi * (X + Y - (a1 + a2) * t)

    def state_at(self, X, Y, t=0.0, eq=None):
        """Pointwise state at coordinates X, Y and time t (exact where one exists)."""
        eq = self.equation() if eq is None else eq
        phase = self._phase(np.asarray(X, float), np.asarray(Y, float), t, eq)
        if isinstance(eq, LinearAdvection):
            return np.sin(phase)[..., None]
        rho = 1.0 + self.amplitude * np.sin(phase)
        v1, v2 = self.velocity
        p = np.ones_like(rho)
        E = p / (eq.gamma - 1.0) + 0.5 * eq.eps**2 * rho * (v1 * v1 + v2 * v2)
        return np.stack([rho, rho * v1, rho * v2, E], axis=-1)


def initial_state(case: TestCase, space: DiscreteSpace):
    """Nodal interpolation of the initial data."""
    _check_case(case, space)
    X, Y = space.node_coordinates
    return case.state_at(X, Y, 0.0, space.equation)


def exact_solution(case: TestCase, space: DiscreteSpace, t: float):
    """Nodal values of the exact solution; only for advection and Euler."""
    if not case.has_exact:
        raise ValueError(f"case {case.name!r} has no closed-form solution")
    _check_case(case, space)
    X, Y = space.node_coordinates
    return case.state_at(X, Y, t, space.equation)


def _check_case(case, space):
    eq = space.equation
    kinds = {"advection": LinearAdvection, "euler": Euler, "navier_stokes": NavierStokes}
    want = kinds[case.name]
    if type(eq) is not want:
        raise ValueError(f"case {case.name!r} does not match equation {type(eq).__name__}")


def l2_error(space: DiscreteSpace, w_h, w_ref):
    """Per-variable L2 errors normalized by the domain area, and their sum."""
    w_h = np.asarray(w_h, float)
    w_ref = np.asarray(w_ref, float)
    if w_h.shape != w_ref.shape:
        raise ValueError(f"shape mismatch {w_h.shape} vs {w_ref.shape}")
    b = space.basis
    ww = np.outer(b.weights, b.weights)
    sq = np.einsum("ij,eijv->v", ww, (w_h - w_ref) ** 2) * space.mesh.jgeo
    per_var = np.sqrt(sq / space.mesh.area)
    return per_var, float(per_var.sum())
