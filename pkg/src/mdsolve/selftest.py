"""Fast invariant checks run by ``mdsolve selftest``.

Each check returns (passed, detail). The problems are tiny so the whole
suite finishes in a few seconds.
"""

from __future__ import annotations

import numpy as np

from .basis import build_basis
from .cases import TestCase, initial_state
from .equations import make_equation
from .mesh import build_cartesian_mesh
from .operators import DiscreteSpace, compute_r1, compute_r1_r2, compute_r2, element_block_jacobian
from .solver import ExtendedState, SolveSpec, blocks_from_jacobians, forward_blocks, jvp
from .timestepping import tableau


def _space(kind, nx=3, N=3):
    return DiscreteSpace(build_cartesian_mesh(nx, nx), build_basis(N), make_equation(kind))


def check_tableaux():
    worst = 0.0
    for q in (4, 6, 8):
        tab = tableau(q)
        for m in range(q):
            lhs = tab.B1 @ tab.c**m
            if m:
                lhs = lhs + m * tab.B2 @ tab.c ** (m - 1)
            worst = max(worst, np.abs(lhs - tab.c ** (m + 1) / (m + 1)).max())
    return worst <= 1e-13, f"max defect {worst:.2e}"


def check_free_stream():
    worst = 0.0
    for kind in ("advection", "euler", "navier_stokes"):
        sp = _space(kind)
        w = np.broadcast_to(initial_state(TestCase(kind), sp)[0, 0, 0], sp.field_shape).copy()
        r1, r2 = compute_r1_r2(sp, w)
        worst = max(worst, np.abs(r1).max(), np.abs(r2).max())
    return worst <= 1e-12, f"max |R| {worst:.2e}"


def check_conservation():
    worst = 0.0
    rng = np.random.default_rng(0)
    for kind in ("advection", "euler", "navier_stokes"):
        sp = _space(kind)
        w = initial_state(TestCase(kind), sp)
        w = w + 0.01 * rng.standard_normal(w.shape)
        worst = max(worst, np.abs(sp.integrate(compute_r1(sp, w))).max() / np.linalg.norm(w))
    return worst <= 1e-12, f"max relative integral {worst:.2e}"


def check_r2_identity():
    sp = _space("advection")
    rng = np.random.default_rng(1)
    w, s = rng.standard_normal((2,) + sp.field_shape)
    err = np.abs(compute_r2(sp, w, s) - compute_r1(sp, s)).max()
    return err <= 1e-13, f"max difference {err:.2e}"


def check_jvp():
    sp = _space("advection")
    w = initial_state(TestCase("advection"), sp)
    r1, r2 = compute_r1_r2(sp, w)
    spec = SolveSpec(0.5, 1 / 6, 0.2, w)
    X = ExtendedState(w, r1)
    rng = np.random.default_rng(2)
    dX = ExtendedState(*rng.standard_normal((2,) + sp.field_shape))
    ex = jvp(sp, spec, X, dX, mode="exact").flat()
    fd = jvp(sp, spec, X, dX, mode="fd").flat()
    rel = np.linalg.norm(fd - ex) / np.linalg.norm(ex)
    return rel <= 1e-6, f"relative difference {rel:.2e}"


def check_block_inverse():
    sp = _space("euler", nx=2, N=2)
    w = initial_state(TestCase("euler"), sp)
    K = element_block_jacobian(sp, w)
    P = blocks_from_jacobians(K, 0.5, 1 / 6, 0.3)
    A, B, C = forward_blocks(K, 0.5, 1 / 6, 0.3)
    m = K.shape[-1]
    worst = 0.0
    for e in range(K.shape[0]):
        fwd = np.block([[A[e], B[e]], [C[e], np.eye(m)]])
        inv = np.block([[P.D[e], P.E[e]], [P.F[e], P.G[e]]])
        worst = max(worst, np.abs(fwd @ inv - np.eye(2 * m)).max())
    return worst <= 1e-10, f"max |P P^-1 - I| {worst:.2e}"


CHECKS = [
    ("tableau exactness", check_tableaux),
    ("free-stream preservation", check_free_stream),
    ("global conservation", check_conservation),
    ("advection R2 identity", check_r2_identity),
    ("difference vs exact JVP", check_jvp),
    ("block inverse identity", check_block_inverse),
]


def run_selftest(out=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            passed, detail = fn()
        except Exception as exc:  # report and keep going
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok
