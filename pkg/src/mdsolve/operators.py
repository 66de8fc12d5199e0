"""Weak-form DGSEM operators for the first and second time derivative.

Nodal fields have shape (nE, N+1, N+1, nvar), optionally preceded by batch
axes. Face data have shape (..., nE, 4, N+1, nvar) in the local face order
of :mod:`mdsolve.mesh`; index k runs along the face.

Every evaluation can run in "frozen" mode, where the neighbour side of each
face is taken from a previously computed context instead of being exchanged.
That is what the element block Jacobians are built from.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .basis import Basis
from .equations import InadmissibleStateError
from .mesh import FACE_SIGN, OPPOSITE_FACE, CartesianMesh

_SIGN01 = FACE_SIGN[:2][:, None, None]
_SIGN23 = FACE_SIGN[2:][:, None, None]


@dataclass(frozen=True)
class DiscreteSpace:
    mesh: CartesianMesh
    basis: Basis
    equation: object
    br2_eta: float = 4.0

    @property
    def n_var(self) -> int:
        return self.equation.n_var

    @property
    def field_shape(self) -> tuple[int, int, int, int]:
        n = self.basis.n_nodes
        return (self.mesh.n_elements, n, n, self.n_var)

    @property
    def block_size(self) -> int:
        n = self.basis.n_nodes
        return n * n * self.n_var

    def zeros(self):
        return np.zeros(self.field_shape)

    @cached_property
    def node_coordinates(self):
        return self.mesh.node_coordinates(self.basis.nodes)

    @cached_property
    def _ops(self):
        b = self.basis
        D = b.dmat
        return {
            "dn_left": b.l_left @ D,
            "dn_right": b.l_right @ D,
            "c_lift": float(np.sum(b.l_right * b.lhat_right)),
        }

    def integrate(self, u):
        """Quadrature of a nodal field over the domain, per variable."""
        w = self.basis.weights
        return self.mesh.jgeo * np.einsum("i,j,eij...->...", w, w, u)


class Lifting(NamedTuple):
    """Lifted gradients: volume (nE, n, n, 3, 2) and face traces (nE, 4, n, 3, 2)."""

    volume: np.ndarray
    faces: np.ndarray


class _Context:
    """Per-evaluation cache: traces and (for Navier-Stokes) lifted gradients."""

    __slots__ = ("w", "wI", "wO", "d", "dI", "dO", "sigma", "sI", "sO", "eta", "etaI", "etaO")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, None)


# ---------------------------------------------------------------- primitives


# Contractions over the first (x) or second (y) node axis of (..., e, i, j, v)
# data. matmul dispatches to BLAS, which is much faster than einsum here.


def _along_x(a, u):
    """sum_l a[..., l] u[..., l, j, v] for a vector or matrix a."""
    n, nv = u.shape[-2], u.shape[-1]
    flat = u.reshape(u.shape[:-2] + (n * nv,))
    out = a @ flat
    return out.reshape(out.shape[:-1] + (n, nv))


def _along_y(a, u):
    """sum_m a[..., m] u[..., i, m, v] for a vector or matrix a."""
    return a @ u


def face_traces(basis: Basis, u):
    """Evaluate the nodal polynomial at the four element faces."""
    lm, lp = basis.l_left, basis.l_right
    t0 = _along_x(lm, u)
    t1 = _along_x(lp, u)
    t2 = _along_y(lm, u)
    t3 = _along_y(lp, u)
    return np.stack([t0, t1, t2, t3], axis=-3)


def exchange(mesh: CartesianMesh, tr, trailing: int = 2):
    """Neighbour-side traces: out[e, f] = tr[neighbor(e, f), opposite(f)].

    ``trailing`` counts the axes after the face axis.
    """
    idx = (Ellipsis, mesh.neighbors, OPPOSITE_FACE[None, :]) + (slice(None),) * trailing
    return tr[idx]


def weak_divergence(space: DiscreteSpace, fx, fy, fn):
    """(1/J)[ s1 Dhat.Fx + s2 Dhat.Fy + sum_faces fn*s*lhat ].

    ``fn`` holds outward normal fluxes per face; ``fx``/``fy`` may be None.
    """
    b = space.basis
    m = space.mesh
    s1, s2 = m.shat_xi1, m.shat_xi2
    out = 0.0
    if fx is not None:
        out = out + s1 * _along_x(b.dhat, fx)
    if fy is not None:
        out = out + s2 * _along_y(b.dhat, fy)
    lhl, lhr = b.lhat_left, b.lhat_right
    out = out + s1 * (
        lhl[:, None, None] * fn[..., 0, None, :, :] + lhr[:, None, None] * fn[..., 1, None, :, :]
    )
    out = out + s2 * (
        lhl[:, None] * fn[..., 2, :, None, :] + lhr[:, None] * fn[..., 3, :, None, :]
    )
    return out / m.jgeo


def _inviscid_normal_flux(eq, wI, wO):
    parts = []
    for d, sgn, sl in ((0, _SIGN01, slice(0, 2)), (1, _SIGN23, slice(2, 4))):
        a = wI[..., sl, :, :]
        b = wO[..., sl, :, :]
        lam = eq.lf_dissipation(d)
        parts.append(sgn * 0.5 * (eq.flux_dir(a, d) + eq.flux_dir(b, d)) + lam * (a - b))
    return np.concatenate(parts, axis=-3)


def _linearized_normal_flux(eq, wI, wO, sI, sO):
    parts = []
    for d, sgn, sl in ((0, _SIGN01, slice(0, 2)), (1, _SIGN23, slice(2, 4))):
        lam = eq.lf_dissipation(d)
        a, b = wI[..., sl, :, :], wO[..., sl, :, :]
        sa, sb = sI[..., sl, :, :], sO[..., sl, :, :]
        parts.append(
            sgn * 0.5 * (eq.flux_dir_jvp(a, sa, d) + eq.flux_dir_jvp(b, sb, d)) + lam * (sa - sb)
        )
    return np.concatenate(parts, axis=-3)


def _lift(space: DiscreteSpace, g, gI, gO):
    """BR2 lifting of gradient variables.

    g: nodal values (..., nE, n, n, 3); gI/gO: inner/outer face values of the
    gradient variables (..., nE, 4, n, 3). Returns (volume, faces).
    """
    b = space.basis
    m = space.mesh
    ops = space._ops
    D = b.dmat
    inv_hx, inv_hy = 2.0 / m.dx, 2.0 / m.dy
    gstar = 0.5 * (gI + gO)

    # global lift, weak form with arithmetic-mean surface values
    zeros2 = np.zeros_like(gstar[..., :2, :, :])
    fn_x = np.concatenate([_SIGN01 * gstar[..., :2, :, :], zeros2], axis=-3)
    fn_y = np.concatenate([zeros2, _SIGN23 * gstar[..., 2:, :, :]], axis=-3)
    dvol_x = weak_divergence(space, g, None, fn_x)
    dvol_y = weak_divergence(space, None, g, fn_y)
    volume = np.stack([dvol_x, dvol_y], axis=-1)

    # face values: interior (strong) gradient plus the scaled local lift of each face
    gT = face_traces(b, g)
    jump = gstar - gT
    c = space.br2_eta * ops["c_lift"]
    fx = np.empty(gT.shape + (2,))
    fx[..., 0, :, :, 0] = inv_hx * _along_x(ops["dn_left"], g)
    fx[..., 1, :, :, 0] = inv_hx * _along_x(ops["dn_right"], g)
    fx[..., 2, :, :, 1] = inv_hy * _along_y(ops["dn_left"], g)
    fx[..., 3, :, :, 1] = inv_hy * _along_y(ops["dn_right"], g)
    tang = D @ gT
    fx[..., :2, :, :, 1] = inv_hy * tang[..., :2, :, :]
    fx[..., 2:, :, :, 0] = inv_hx * tang[..., 2:, :, :]
    fx[..., :2, :, :, 0] += inv_hx * c * _SIGN01 * jump[..., :2, :, :]
    fx[..., 2:, :, :, 1] += inv_hy * c * _SIGN23 * jump[..., 2:, :, :]
    return volume, fx


def _viscous_normal_flux(eq, wI, wO, dI, dO):
    parts = []
    for l, sgn, sl in ((0, _SIGN01, slice(0, 2)), (1, _SIGN23, slice(2, 4))):
        a = eq.viscous_flux_dir(wI[..., sl, :, :], dI[..., sl, :, :, :], l)
        b = eq.viscous_flux_dir(wO[..., sl, :, :], dO[..., sl, :, :, :], l)
        parts.append(sgn * 0.5 * (a + b))
    return np.concatenate(parts, axis=-3)


def _viscous_normal_flux_jvp(eq, ctx):
    parts = []
    for l, sgn, sl in ((0, _SIGN01, slice(0, 2)), (1, _SIGN23, slice(2, 4))):
        a = eq.viscous_flux_dir_jvp(
            ctx.wI[..., sl, :, :], ctx.dI[..., sl, :, :, :],
            ctx.sI[..., sl, :, :], ctx.etaI[..., sl, :, :, :], l,
        )
        b = eq.viscous_flux_dir_jvp(
            ctx.wO[..., sl, :, :], ctx.dO[..., sl, :, :, :],
            ctx.sO[..., sl, :, :], ctx.etaO[..., sl, :, :, :], l,
        )
        parts.append(sgn * 0.5 * (a + b))
    return np.concatenate(parts, axis=-3)


# ---------------------------------------------------------------- evaluation


def _outer(mesh: CartesianMesh, inner, frozen_outer, trailing=2):
    """Outer traces; frozen ones are kept except across faces where an element
    is its own periodic neighbour."""
    if frozen_outer is None:
        return exchange(mesh, inner, trailing)
    selfish = mesh.neighbors == np.arange(mesh.n_elements)[:, None]
    if not selfish.any():
        return frozen_outer
    mask = selfish.reshape(selfish.shape + (1,) * trailing)
    return np.where(mask, exchange(mesh, inner, trailing), frozen_outer)


def _prepare(space: DiscreteSpace, w, frozen: _Context | None = None) -> _Context:
    eq = space.equation
    ctx = _Context()
    ctx.w = w
    ctx.wI = face_traces(space.basis, w)
    ctx.wO = _outer(space.mesh, ctx.wI, None if frozen is None else frozen.wO)
    if eq.has_viscous:
        g = eq._grad_vars(w)
        gI = eq._grad_vars(ctx.wI)
        gO = eq._grad_vars(ctx.wO)
        ctx.d, ctx.dI = _lift(space, g, gI, gO)
        ctx.dO = _outer(space.mesh, ctx.dI, None if frozen is None else frozen.dO, 3)
    return ctx


def _first(space: DiscreteSpace, ctx: _Context):
    eq = space.equation
    w = ctx.w
    fx = eq.flux_dir(w, 0)
    fy = eq.flux_dir(w, 1)
    fn = _inviscid_normal_flux(eq, ctx.wI, ctx.wO)
    if eq.has_viscous:
        fx = fx - eq.viscous_flux_dir(w, ctx.d, 0)
        fy = fy - eq.viscous_flux_dir(w, ctx.d, 1)
        fn = fn - _viscous_normal_flux(eq, ctx.wI, ctx.wO, ctx.dI, ctx.dO)
    return -weak_divergence(space, fx, fy, fn)


def _attach_sigma(space: DiscreteSpace, ctx: _Context, sigma, frozen: _Context | None = None):
    """Return a copy of ``ctx`` carrying sigma traces and (for NS) eta."""
    eq = space.equation
    out = _Context()
    for name in ("w", "wI", "wO", "d", "dI", "dO"):
        setattr(out, name, getattr(ctx, name))
    out.sigma = sigma
    out.sI = face_traces(space.basis, sigma)
    out.sO = _outer(space.mesh, out.sI, None if frozen is None else frozen.sO)
    if eq.has_viscous:
        gs = eq._grad_vars_jvp(ctx.w, sigma)
        gsI = eq._grad_vars_jvp(ctx.wI, out.sI)
        gsO = eq._grad_vars_jvp(ctx.wO, out.sO)
        out.eta, out.etaI = _lift(space, gs, gsI, gsO)
        out.etaO = _outer(space.mesh, out.etaI, None if frozen is None else frozen.etaO, 3)
    return out


def _second(space: DiscreteSpace, sctx: _Context):
    eq = space.equation
    w, s = sctx.w, sctx.sigma
    fx = eq.flux_dir_jvp(w, s, 0)
    fy = eq.flux_dir_jvp(w, s, 1)
    fn = _linearized_normal_flux(eq, sctx.wI, sctx.wO, sctx.sI, sctx.sO)
    if eq.has_viscous:
        fx = fx - eq.viscous_flux_dir_jvp(w, sctx.d, s, sctx.eta, 0)
        fy = fy - eq.viscous_flux_dir_jvp(w, sctx.d, s, sctx.eta, 1)
        fn = fn - _viscous_normal_flux_jvp(eq, sctx)
    return -weak_divergence(space, fx, fy, fn)


def _check_field(space: DiscreteSpace, w, name="w"):
    w = np.asarray(w, dtype=float)
    if w.shape != space.field_shape:
        raise ValueError(f"{name} has shape {w.shape}, expected {space.field_shape}")
    return w


def _check_admissible(space: DiscreteSpace, w):
    try:
        space.equation.check_admissible(w)
    except InadmissibleStateError as exc:
        bad = None
        if space.equation.n_var > 1:
            rho = w[..., 0]
            mask = ~np.isfinite(w).all(axis=-1) | (rho <= 0)
            if not mask.any():
                p = space.equation._pressure(w)
                mask = p < 0
            if mask.any():
                bad = tuple(int(i) for i in np.argwhere(mask)[0])
        else:
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(w))[0][:3])
        loc = "" if bad is None else f" (element {bad[0]}, node {bad[1:3]})"
        raise InadmissibleStateError(f"{exc}{loc}", state=exc.state, location=bad) from None


def compute_r1(space: DiscreteSpace, w, check: bool = True):
    """First time derivative R1_h(w)."""
    w = _check_field(space, w)
    if check:
        _check_admissible(space, w)
    return _first(space, _prepare(space, w))


def compute_r2(space: DiscreteSpace, w, sigma, check: bool = True):
    """Second time derivative R2_h(w, sigma); linear in sigma."""
    w = _check_field(space, w)
    sigma = _check_field(space, sigma, "sigma")
    if check:
        _check_admissible(space, w)
    ctx = _prepare(space, w)
    return _second(space, _attach_sigma(space, ctx, sigma))


def compute_r1_r2(space: DiscreteSpace, w, sigma=None, check: bool = True):
    """Both derivatives sharing traces and lifting; sigma defaults to R1_h(w)."""
    w = _check_field(space, w)
    if check:
        _check_admissible(space, w)
    ctx = _prepare(space, w)
    r1 = _first(space, ctx)
    if sigma is None:
        sigma = r1
    r2 = _second(space, _attach_sigma(space, ctx, sigma))
    return r1, r2


def compute_lifting(space: DiscreteSpace, w) -> Lifting:
    """BR2-lifted gradients of (v1, v2, T) and their face traces."""
    if not space.equation.has_viscous:
        raise ValueError("lifting requires the navier_stokes equation")
    w = _check_field(space, w)
    _check_admissible(space, w)
    ctx = _prepare(space, w)
    return Lifting(ctx.d, ctx.dI)


def compute_eta(space: DiscreteSpace, w, sigma) -> Lifting:
    """Linearized lifting: the lift of (d w_grad / d w) sigma."""
    if not space.equation.has_viscous:
        raise ValueError("lifting requires the navier_stokes equation")
    w = _check_field(space, w)
    sigma = _check_field(space, sigma, "sigma")
    ctx = _attach_sigma(space, _prepare(space, w), sigma)
    return Lifting(ctx.eta, ctx.etaI)


# ---------------------------------------------------------------- linearized evaluation


class Linearization:
    """Operator evaluations around a fixed (W, sigma).

    Caches the base R1_h(W), R2_h(W, sigma) and the face context so that
    directional finite differences and frozen-neighbour block evaluations
    reuse them.
    """

    def __init__(self, space: DiscreteSpace, w, sigma):
        self.space = space
        self.w = w
        self.sigma = sigma
        self.ctx = _prepare(space, w)
        self.r1 = _first(space, self.ctx)
        self.sctx = _attach_sigma(space, self.ctx, sigma)
        self.r2 = _second(space, self.sctx)
        self.n_evals = 0

    def perturbed_w(self, dw, h):
        """(R1(W + h dw), R2(W + h dw, sigma))."""
        ctx = _prepare(self.space, self.w + h * dw)
        r1 = _first(self.space, ctx)
        r2 = _second(self.space, _attach_sigma(self.space, ctx, self.sigma))
        self.n_evals += 2
        return r1, r2

    def r1_of(self, w):
        self.n_evals += 1
        return _first(self.space, _prepare(self.space, w))

    def r2_sigma(self, sigma):
        """R2(W, sigma') at the cached W."""
        self.n_evals += 1
        return _second(self.space, _attach_sigma(self.space, self.ctx, sigma))

    # frozen-neighbour (block-Jacobi) evaluations; w may carry leading batch axes
    def local_r1(self, w):
        return _first(self.space, _prepare(self.space, w, frozen=self.ctx))

    def local_r2(self, w):
        ctx = _prepare(self.space, w, frozen=self.ctx)
        sctx = _attach_sigma(self.space, ctx, self.sigma, frozen=self.sctx)
        return _second(self.space, sctx)


def _block_fd(space: DiscreteSpace, w, local_op, base, max_batch_entries: int = 3_000_000):
    nE = space.mesh.n_elements
    m = space.block_size
    flat_w = w.reshape(nE, m)
    base = base.reshape(nE, m)
    h = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(flat_w))
    K = np.empty((nE, m, m))
    chunk = max(1, min(m, max_batch_entries // (nE * m)))
    for c0 in range(0, m, chunk):
        cols = np.arange(c0, min(m, c0 + chunk))
        wp = np.broadcast_to(flat_w, (cols.size, nE, m)).copy()
        wp[np.arange(cols.size), :, cols] += h[:, cols].T
        rp = local_op(wp.reshape((cols.size,) + space.field_shape)).reshape(cols.size, nE, m)
        K[:, :, cols] = np.transpose((rp - base[None]) / h[:, cols].T[:, :, None], (1, 2, 0))
    return K


def element_block_jacobian(space: DiscreteSpace, w, lin: Linearization | None = None):
    """Element-local Jacobians of R1_h with neighbour traces frozen, shape (nE, m, m).

    Column j is a one-sided difference with step sqrt(eps_mach)(1 + |w_j|).
    """
    w = _check_field(space, w)
    if lin is None:
        lin = Linearization(space, w, np.zeros_like(w))
    return _block_fd(space, w, lin.local_r1, lin.r1)


def element_block_hessian(space: DiscreteSpace, w, lin: Linearization | None = None):
    """Element-local blocks of dR2_h/dW at fixed sigma = R1_h(W)."""
    w = _check_field(space, w)
    if space.equation.is_linear:
        # R2(W, sigma) = R1(sigma) does not depend on W
        m = space.block_size
        return np.zeros((space.mesh.n_elements, m, m))
    if lin is None:
        lin = Linearization(space, w, compute_r1(space, w))
    return _block_fd(space, w, lin.local_r2, lin.r2)
