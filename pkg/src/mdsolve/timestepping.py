"""Hermite-Birkhoff predictor-corrector time integration HBPC(q, k_max).

Each step copies w^n into stage 1, runs a predictor sweep of cascaded
two-point fourth-order implicit solves, then k_max corrector sweeps that
solve the limiting Hermite-Birkhoff Runge-Kutta stage equations with the
previous sweep's data on the right-hand side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction as Fr

import numpy as np

from .equations import InadmissibleStateError
from .operators import DiscreteSpace, compute_r1, compute_r1_r2
from .solver import (
    ExtendedState,
    PreconditionerManager,
    SolveSpec,
    SolverConfig,
    SolverError,
    newton_solve,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ButcherTableau:
    q: int
    c: np.ndarray
    B1: np.ndarray
    B2: np.ndarray

    @property
    def s(self) -> int:
        return self.c.size


_TABLEAUX = {
    4: (
        [0, 1],
        [[0, 0], [Fr(1, 2), Fr(1, 2)]],
        [[0, 0], [Fr(1, 12), Fr(-1, 12)]],
    ),
    6: (
        [0, Fr(1, 2), 1],
        [[0, 0, 0], [Fr(101, 480), Fr(8, 30), Fr(55, 2400)], [Fr(7, 30), Fr(16, 30), Fr(7, 30)]],
        [[0, 0, 0], [Fr(65, 4800), Fr(-25, 600), Fr(-25, 8000)], [Fr(5, 300), 0, Fr(-5, 300)]],
    ),
    8: (
        [0, Fr(1, 3), Fr(2, 3), 1],
        [
            [0, 0, 0, 0],
            [Fr(6893, 54432), Fr(313, 2016), Fr(89, 2016), Fr(397, 54432)],
            [Fr(223, 1701), Fr(20, 63), Fr(13, 63), Fr(20, 1701)],
            [Fr(31, 224), Fr(81, 224), Fr(81, 224), Fr(31, 224)],
        ],
        [
            [0, 0, 0, 0],
            [Fr(1283, 272160), Fr(-851, 30240), Fr(-269, 30240), Fr(-163, 272160)],
            [Fr(43, 8505), Fr(-16, 945), Fr(-19, 945), Fr(-8, 8505)],
            [Fr(19, 3360), Fr(-9, 1120), Fr(9, 1120), Fr(-19, 3360)],
        ],
    ),
}


def tableau_fractions(q: int):
    """Exact rational (c, B1, B2) for order q."""
    if q not in _TABLEAUX:
        raise ValueError(f"unsupported order q={q}; choose one of {sorted(_TABLEAUX)}")
    c, b1, b2 = _TABLEAUX[q]
    return [Fr(x) for x in c], [[Fr(x) for x in r] for r in b1], [[Fr(x) for x in r] for r in b2]


def tableau(q: int) -> ButcherTableau:
    c, b1, b2 = tableau_fractions(q)
    arrs = [np.array([float(x) for x in c])]
    arrs += [np.array([[float(x) for x in r] for r in m]) for m in (b1, b2)]
    for a in arrs:
        a.setflags(write=False)
    return ButcherTableau(q, *arrs)


def stage_quadrature(tab: ButcherTableau, dt: float, r1_stages, r2_stages, l: int):
    """I_l = dt sum_j B1[l, j] R1_j + dt^2 sum_j B2[l, j] R2_j (l is 0-based)."""
    if len(r1_stages) != tab.s or len(r2_stages) != tab.s:
        raise ValueError(f"need {tab.s} stage fields, got {len(r1_stages)} and {len(r2_stages)}")
    out = np.zeros_like(np.asarray(r1_stages[0], dtype=float))
    for j in range(tab.s):
        if tab.B1[l, j] != 0.0:
            out += dt * tab.B1[l, j] * r1_stages[j]
        if tab.B2[l, j] != 0.0:
            out += dt * dt * tab.B2[l, j] * r2_stages[j]
    return out


@dataclass(frozen=True)
class HbpcConfig:
    q: int = 4
    k_max: int = 0

    def __post_init__(self):
        if self.q not in _TABLEAUX:
            raise ValueError(f"unsupported order q={self.q}")
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ValueError(f"k_max must be a nonnegative integer, got {self.k_max}")


@dataclass
class StageStore:
    """Stage values and their cached R1/R2 for the current sweep."""

    W: list
    R1: list
    R2: list

    @classmethod
    def empty(cls, s):
        return cls([None] * s, [None] * s, [None] * s)

    def copy(self):
        return StageStore(list(self.W), list(self.R1), list(self.R2))


@dataclass
class StageDiagnostics:
    sweep: int  # 0 is the predictor
    stage: int  # 1-based
    newton_iterations: int
    gmres_iterations: int
    sigma_defect: float
    initial_residual: float = 0.0


@dataclass
class StepDiagnostics:
    stages: list = field(default_factory=list)

    @property
    def newton_iterations(self) -> int:
        return sum(s.newton_iterations for s in self.stages)

    @property
    def gmres_iterations(self) -> int:
        return sum(s.gmres_iterations for s in self.stages)


class StageSolveError(SolverError):
    def __init__(self, message, stage, sweep, cause=None):
        super().__init__(message)
        self.stage = stage
        self.sweep = sweep
        self.cause = cause


def _solve_stage(space, cfg, precond, spec, w_guess, r1_guess, sweep, stage):
    try:
        X, info = newton_solve(space, spec, cfg, ExtendedState(w_guess, r1_guess), precond)
    except (SolverError, ValueError, FloatingPointError) as exc:
        name = "predictor" if sweep == 0 else f"corrector sweep {sweep}"
        raise StageSolveError(
            f"stage {stage} of {name} failed: {exc}", stage=stage, sweep=sweep, cause=exc
        ) from exc
    diag = StageDiagnostics(sweep, stage, info.iterations, info.gmres_iterations, info.sigma_defect,
                            info.residual_history[0])
    return X.W, diag


def hbpc_advance(space: DiscreteSpace, config: HbpcConfig, tab: ButcherTableau, solver: SolverConfig,
                 w, dt: float, precond: PreconditionerManager | None = None, start=None):
    """Advance w by one HBPC step of size dt; returns (w_new, StepDiagnostics).

    ``start`` may hold precomputed (R1, R2) at w.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if precond is None:
        precond = PreconditionerManager(space, solver)
    precond.new_step()
    s = tab.s
    c = tab.c
    wn = w
    r1n, r2n = start if start is not None else compute_r1_r2(space, wn)
    diag = StepDiagnostics()

    cur = StageStore.empty(s)
    cur.W[0], cur.R1[0], cur.R2[0] = wn, r1n, r2n
    for l in range(1, s):
        dc = c[l] - c[l - 1]
        a1, a2 = dc / 2.0, dc * dc / 6.0
        b = cur.W[l - 1] + a1 * dt * cur.R1[l - 1] + 0.5 * a2 * dt * dt * cur.R2[l - 1]
        spec = SolveSpec(a1, a2, dt, b)
        Wl, d = _solve_stage(space, solver, precond, spec, cur.W[l - 1], cur.R1[l - 1], 0, l + 1)
        cur.W[l] = Wl
        cur.R1[l], cur.R2[l] = compute_r1_r2(space, Wl)
        diag.stages.append(d)

    for k in range(1, config.k_max + 1):
        prev = cur
        cur = StageStore.empty(s)
        cur.W[0], cur.R1[0], cur.R2[0] = wn, r1n, r2n
        for l in range(1, s):
            quad = stage_quadrature(tab, dt, prev.R1, prev.R2, l)
            b = wn - dt * prev.R1[l] + 0.5 * dt * dt * prev.R2[l] + quad
            spec = SolveSpec(1.0, 1.0, dt, b)
            Wl, d = _solve_stage(space, solver, precond, spec, prev.W[l], prev.R1[l], k, l + 1)
            cur.W[l] = Wl
            cur.R1[l], cur.R2[l] = compute_r1_r2(space, Wl)
            diag.stages.append(d)

    diag.final_store = cur
    return cur.W[s - 1], diag


class HBPCIntegrator:
    """Stateful wrapper that keeps the preconditioner manager and reuses the
    last stage's R1/R2 as the next step's stage-1 data (first same as last)."""

    def __init__(self, space: DiscreteSpace, q: int = 4, k_max: int = 0,
                 solver: SolverConfig | None = None):
        self.space = space
        self.config = HbpcConfig(q, k_max)
        self.tab = tableau(q)
        self.solver = solver if solver is not None else SolverConfig()
        self.precond = PreconditionerManager(space, self.solver)
        self._last = None

    def step(self, w, dt):
        start = None
        if self._last is not None and self._last[0] is w:
            start = self._last[1:]
        w_new, diag = hbpc_advance(self.space, self.config, self.tab, self.solver, w, dt,
                                   self.precond, start)
        st = diag.final_store
        self._last = (w_new, st.R1[-1], st.R2[-1])
        return w_new, diag


class BlowUpError(RuntimeError):
    pass


def rk4_reference_advance(space: DiscreteSpace, dt: float, w):
    """Classical four-stage RK4 step for w_t = R1(w)."""
    try:
        k1 = compute_r1(space, w)
        k2 = compute_r1(space, w + 0.5 * dt * k1)
        k3 = compute_r1(space, w + 0.5 * dt * k2)
        k4 = compute_r1(space, w + dt * k3)
    except InadmissibleStateError as exc:
        raise BlowUpError(f"explicit reference step failed: {exc}") from exc
    out = w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state in explicit reference step")
    return out
