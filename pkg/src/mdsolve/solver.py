"""Newton-Krylov solver for the extended two-derivative system.

The unknown is X = (W, sigma) with sigma constrained to R1_h(W). Each stage
solve finds the root of

    G1 = W - a1 dt R1(W) + (a2 dt^2 / 2) R2(W, sigma) - b
    G2 = sigma - R1(W)

by Newton's method with matrix-free Jacobian-vector products and restarted,
right-preconditioned GMRES.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import daxpy as _daxpy, ddot as _ddot

from .operators import (
    DiscreteSpace,
    Linearization,
    _first,
    _prepare,
    element_block_hessian,
    element_block_jacobian,
)

log = logging.getLogger(__name__)

EPS_MACHINE = np.finfo(float).eps

PRECONDITIONERS = ("none", "bj_ext", "bj_ext_h")
MODES = ("extended", "schur")
REBUILD_POLICIES = ("each_newton", "each_timestep")


class SolverError(RuntimeError):
    pass


class GMRESNotConverged(SolverError):
    def __init__(self, message, residual_norm, iterations):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class NewtonNotConverged(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class PreconditionerError(SolverError):
    pass


@dataclass
class SolverConfig:
    tol_newton_rel: float = 1e-8
    tol_newton_abs: float = 1e-12
    tol_residual_abs: float = 1e-14
    max_newton: int = 50
    tol_gmres_rel: float = 1e-3
    gmres_restart: int = 700
    max_krylov_total: int = 7000
    preconditioner: str = "bj_ext"
    mode: str = "extended"
    precond_rebuild: str = "each_newton"
    jvp: str = "auto"  # auto | fd | exact
    fd_norm: str = "rms"  # rms | l2, norm used in the difference step

    def __post_init__(self):
        for name in ("tol_newton_rel", "tol_gmres_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tol_newton_abs < 0 or self.tol_residual_abs < 0:
            raise ValueError("absolute tolerances must be nonnegative")
        if self.gmres_restart < 1 or self.max_krylov_total < 1 or self.max_newton < 1:
            raise ValueError("restart and iteration caps must be at least 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.precond_rebuild not in REBUILD_POLICIES:
            raise ValueError(f"unknown precond_rebuild {self.precond_rebuild!r}")
        if self.jvp not in ("auto", "fd", "exact"):
            raise ValueError(f"unknown jvp mode {self.jvp!r}")
        if self.fd_norm not in ("rms", "l2"):
            raise ValueError(f"unknown fd_norm {self.fd_norm!r}")


@dataclass
class ExtendedState:
    W: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.W.shape != self.sigma.shape:
            raise ValueError("W and sigma must have the same shape")

    def flat(self):
        return np.concatenate([self.W.ravel(), self.sigma.ravel()])

    @classmethod
    def from_flat(cls, x, shape):
        n = int(np.prod(shape))
        return cls(x[:n].reshape(shape), x[n:].reshape(shape))

    def norm(self):
        return float(np.sqrt(np.vdot(self.W, self.W) + np.vdot(self.sigma, self.sigma)))


@dataclass(frozen=True)
class SolveSpec:
    alpha1: float
    alpha2: float
    dt: float
    b: np.ndarray

    @property
    def c1(self):
        return self.alpha1 * self.dt

    @property
    def c2(self):
        return 0.5 * self.alpha2 * self.dt**2


# ---------------------------------------------------------------- residual & products


def _residual_from(spec: SolveSpec, lin: Linearization) -> ExtendedState:
    g1 = lin.w - spec.c1 * lin.r1 + spec.c2 * lin.r2 - spec.b
    g2 = lin.sigma - lin.r1
    return ExtendedState(g1, g2)


def residual(space: DiscreteSpace, spec: SolveSpec, X: ExtendedState) -> ExtendedState:
    lin = Linearization(space, X.W, X.sigma)
    return _residual_from(spec, lin)


def fd_step(direction, eps_ref=1.0, norm="rms"):
    """Difference step sqrt(eps_machine) / (eps ||d||).

    With ``norm="rms"`` the 2-norm is divided by sqrt(size), so each entry of
    the perturbation is about sqrt(eps_machine) regardless of the grid size.
    """
    nrm = np.linalg.norm(direction)
    if norm == "rms":
        nrm /= np.sqrt(direction.size)
    return np.sqrt(EPS_MACHINE) / (eps_ref * nrm)


def _use_exact(space: DiscreteSpace, cfg_jvp: str) -> bool:
    linear = getattr(space.equation, "is_linear", False)
    if cfg_jvp == "exact" and not linear:
        raise ValueError("the exact Jacobian-vector product needs a linear flux")
    return linear and cfg_jvp in ("auto", "exact")


def _linear_r1(space, u):
    return _first(space, _prepare(space, u))


class ExtendedJacobian:
    """Matrix-free action of the extended system matrix on flat (dW, dsigma)."""

    def __init__(self, space: DiscreteSpace, spec: SolveSpec, lin: Linearization, jvp="auto",
                 fd_norm="rms"):
        self.space = space
        self.fd_norm = fd_norm
        self.spec = spec
        self.lin = lin
        self.exact = _use_exact(space, jvp)
        self.shape = space.field_shape
        self.n = int(np.prod(self.shape))
        self.eps_ref = float(getattr(space.equation, "eps", 1.0))
        self.n_calls = 0

    def __call__(self, x):
        self.n_calls += 1
        dW = x[: self.n].reshape(self.shape)
        ds = x[self.n :].reshape(self.shape)
        c1, c2 = self.spec.c1, self.spec.c2
        if self.exact:
            kw = _linear_r1(self.space, dW)
            ks = _linear_r1(self.space, ds)
            top = dW - c1 * kw + c2 * ks
            bot = ds - kw
        else:
            kw, hw = self.directional_w(dW)
            nrm_s = np.linalg.norm(ds)
            if nrm_s == 0.0:
                ks = np.zeros(self.shape)
            else:
                h = fd_step(ds, self.eps_ref, self.fd_norm)
                ks = (self.lin.r2_sigma(self.lin.sigma + h * ds) - self.lin.r2) / h
            top = dW - c1 * kw + c2 * hw + c2 * ks
            bot = ds - kw
        return np.concatenate([top.ravel(), bot.ravel()])

    def directional_w(self, dW):
        """Finite-difference (dR1/dW) dW and (dR2/dW) dW at fixed sigma."""
        nrm = np.linalg.norm(dW)
        if nrm == 0.0:
            z = np.zeros(self.shape)
            return z, z
        h = fd_step(dW, self.eps_ref, self.fd_norm)
        r1p, r2p = self.lin.perturbed_w(dW, h)
        return (r1p - self.lin.r1) / h, (r2p - self.lin.r2) / h


def jvp(space: DiscreteSpace, spec: SolveSpec, X: ExtendedState, dX: ExtendedState,
        mode: str = "auto", lin: Linearization | None = None, fd_norm: str = "rms") -> ExtendedState:
    """One Jacobian-vector product of the extended system."""
    if lin is None:
        lin = Linearization(space, X.W, X.sigma)
    op = ExtendedJacobian(space, spec, lin, mode, fd_norm)
    out = op(dX.flat())
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite Jacobian-vector product")
    return ExtendedState.from_flat(out, space.field_shape)


class SchurOperator:
    """v -> v - a1 dt K v + c2 H v + c2 K(K v) acting on W-shaped data."""

    def __init__(self, space: DiscreteSpace, spec: SolveSpec, lin: Linearization, jvp="auto",
                 fd_norm="rms"):
        self.jac = ExtendedJacobian(space, spec, lin, jvp, fd_norm)
        self.space = space
        self.spec = spec
        self.shape = space.field_shape

    def k_apply(self, v):
        if self.jac.exact:
            return _linear_r1(self.space, v)
        return self.jac.directional_w(v)[0]

    def __call__(self, x):
        v = x.reshape(self.shape)
        c1, c2 = self.spec.c1, self.spec.c2
        if self.jac.exact:
            kv = _linear_r1(self.space, v)
            out = v - c1 * kv + c2 * _linear_r1(self.space, kv)
        else:
            kv, hv = self.jac.directional_w(v)
            kkv = self.jac.directional_w(kv)[0]
            out = v - c1 * kv + c2 * hv + c2 * kkv
        return out.ravel()


# ---------------------------------------------------------------- GMRES


@dataclass
class GMRESInfo:
    iterations: int
    residual_norm: float
    rhs_norm: float
    restarts: int


def gmres(apply, rhs, precond=None, tol=1e-3, restart=700, max_iter=7000, x0=None):
    """Restarted GMRES with right preconditioning and modified Gram-Schmidt.

    Solves (A P^-1) y = rhs and returns x = P^-1 y together with a GMRESInfo.
    Convergence means ||rhs - A x|| <= tol ||rhs||; the count of Arnoldi
    steps is accumulated across restarts.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    bnorm = float(np.linalg.norm(rhs))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), GMRESInfo(0, 0.0, 0.0, 0)
    target = tol * bnorm
    total = 0
    restarts = -1
    pc = precond if precond is not None else (lambda v: v)
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    beta = float(np.linalg.norm(r))
    while True:
        restarts += 1
        if beta <= target:
            return x, GMRESInfo(total, beta, bnorm, restarts)
        if total >= max_iter:
            raise GMRESNotConverged(
                f"GMRES did not converge in {total} iterations "
                f"(relative residual {beta / bnorm:.3e} > {tol:.1e})",
                residual_norm=beta,
                iterations=total,
            )
        m = min(restart, max_iter - total)
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            wv = np.array(apply(pc(V[j])), dtype=float)  # never alias V
            total += 1
            for i in range(j + 1):
                H[i, j] = _ddot(V[i], wv)
                wv = _daxpy(V[i], wv, a=-H[i, j])
            H[j + 1, j] = np.linalg.norm(wv)
            breakdown = H[j + 1, j] <= 1e-14 * abs(H[j, j]) + 1e-300
            if not breakdown:
                V[j + 1] = wv / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if abs(g[j + 1]) <= target or breakdown:
                break
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k > 1 else g[:1] / H[0, 0]
        x = x + pc(V[:k].T @ y)
        r = rhs - apply(x)
        beta = float(np.linalg.norm(r))


# ---------------------------------------------------------------- preconditioners


@dataclass
class PrecondBlocks:
    """Element-wise inverse P^-1 = [[D, E], [F, G]] of the extended block-Jacobi
    preconditioner, stored as the element Jacobians K and one core inverse.

    bj_ext:   D = S, E = -c2 K S, F = K S, G = (I - c1 K) S
    bj_ext_h: D = S, E = -c2 S K, F = K S, G = I - c2 K S K
    The explicit blocks are available as properties; ``apply`` uses the
    factored form, which reads each stored block set once or twice.
    """

    K: np.ndarray
    core: np.ndarray
    alpha1: float
    alpha2: float
    dt: float
    variant: str

    @property
    def c1(self):
        return self.alpha1 * self.dt

    @property
    def c2(self):
        return 0.5 * self.alpha2 * self.dt**2

    @property
    def D(self):
        return self.core

    @property
    def E(self):
        if self.variant == "bj_ext":
            return -self.c2 * (self.K @ self.core)
        return -self.c2 * (self.core @ self.K)

    @property
    def F(self):
        return self.K @ self.core

    @property
    def G(self):
        m = self.K.shape[-1]
        if self.variant == "bj_ext":
            return (np.eye(m) - self.c1 * self.K) @ self.core
        return np.eye(m) - self.c2 * (self.K @ self.core @ self.K)

    def apply(self, x):
        nE, m, _ = self.K.shape
        half = nE * m
        w = x[:half].reshape(nE, m)
        s = x[half:].reshape(nE, m)
        if self.variant == "bj_ext":
            # u = S w, v = S s; top = u - c2 K v; bot = K (u - c1 v) + v
            uv = self.core @ np.stack([w, s], axis=-1)
            u, v = uv[..., 0], uv[..., 1]
            kk = self.K @ np.stack([v, u - self.c1 * v], axis=-1)
            top = u - self.c2 * kk[..., 0]
            bot = kk[..., 1] + v
        else:
            # top = S (w - c2 K s); bot = s + K top
            ks = (self.K @ s[..., None])[..., 0]
            top = (self.core @ (w - self.c2 * ks)[..., None])[..., 0]
            bot = s + (self.K @ top[..., None])[..., 0]
        return np.concatenate([top.ravel(), bot.ravel()])

    __call__ = apply


@dataclass
class SchurBlocks:
    """Per-element core inverse S_i used for the Schur-complement system."""

    S: np.ndarray

    def __call__(self, x):
        nE, m, _ = self.S.shape
        return (self.S @ x.reshape(nE, m, 1)).ravel()


def _invert_blocks(M, dt, what):
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError:
        for e in range(M.shape[0]):
            try:
                np.linalg.inv(M[e])
            except np.linalg.LinAlgError:
                raise PreconditionerError(
                    f"singular {what} block on element {e} (dt={dt})"
                ) from None
        raise


def blocks_from_jacobians(K, alpha1, alpha2, dt, variant="bj_ext", H=None, K2=None) -> PrecondBlocks:
    """Block inverse from element Jacobians K (and Hessian blocks H for bj_ext_h)."""
    m = K.shape[-1]
    c1 = alpha1 * dt
    c2 = 0.5 * alpha2 * dt**2
    if K2 is None:
        K2 = K @ K
    core = np.eye(m) - c1 * K + c2 * K2
    if variant == "bj_ext":
        return PrecondBlocks(K, _invert_blocks(core, dt, "bj_ext core"), alpha1, alpha2, dt, variant)
    if variant == "bj_ext_h":
        if H is None:
            raise ValueError("bj_ext_h needs the element Hessian blocks")
        core = _invert_blocks(core + c2 * H, dt, "bj_ext_h core")
        return PrecondBlocks(K, core, alpha1, alpha2, dt, variant)
    raise ValueError(f"unknown preconditioner variant {variant!r}")


def build_precond(space: DiscreteSpace, W, alpha1, alpha2, dt, variant="bj_ext") -> PrecondBlocks:
    """Extended block-Jacobi preconditioner at state W."""
    if variant not in ("bj_ext", "bj_ext_h"):
        raise ValueError(f"unknown preconditioner variant {variant!r}")
    from .operators import compute_r1

    lin = Linearization(space, W, compute_r1(space, W, check=False))
    K = element_block_jacobian(space, W, lin)
    H = element_block_hessian(space, W, lin) if variant == "bj_ext_h" else None
    return blocks_from_jacobians(K, alpha1, alpha2, dt, variant, H)


def apply_precond(blocks: PrecondBlocks, X: ExtendedState) -> ExtendedState:
    return ExtendedState.from_flat(blocks.apply(X.flat()), X.W.shape)


def forward_blocks(K, alpha1, alpha2, dt, variant="bj_ext", H=None):
    """The blocks (A, B, C) of the element preconditioner P itself."""
    m = K.shape[-1]
    c1 = alpha1 * dt
    c2 = 0.5 * alpha2 * dt**2
    A = np.eye(m) - c1 * K
    if variant == "bj_ext_h":
        A = A + c2 * H
    return A, c2 * K, -K


class PreconditionerManager:
    """Builds and caches element preconditioners according to the rebuild policy."""

    def __init__(self, space: DiscreteSpace, cfg: SolverConfig):
        self.space = space
        self.cfg = cfg
        self.n_builds = 0
        self.new_step()

    def new_step(self):
        self.K = None
        self.K2 = None
        self.H = None
        self._blocks = {}

    def _jacobians(self, lin):
        need_h = self.cfg.preconditioner == "bj_ext_h" and self.cfg.mode == "extended"
        if self.cfg.precond_rebuild == "each_newton" or self.K is None:
            self.K = element_block_jacobian(self.space, lin.w, lin)
            self.K2 = self.K @ self.K
            self.H = None
            self._blocks = {}
            self.n_builds += 1
        if need_h and self.H is None:
            sig_lin = Linearization(self.space, lin.w, lin.r1)
            self.H = element_block_hessian(self.space, lin.w, sig_lin)
        return self.K, self.H

    def get(self, lin: Linearization, spec: SolveSpec):
        if self.cfg.preconditioner == "none":
            return None
        K, H = self._jacobians(lin)
        key = (spec.alpha1, spec.alpha2, spec.dt)
        if key not in self._blocks:
            if self.cfg.mode == "schur":
                m = K.shape[-1]
                S = _invert_blocks(np.eye(m) - spec.c1 * K + spec.c2 * self.K2, spec.dt, "Schur core")
                self._blocks[key] = SchurBlocks(S)
            else:
                self._blocks[key] = blocks_from_jacobians(
                    K, spec.alpha1, spec.alpha2, spec.dt, self.cfg.preconditioner, H, self.K2
                )
        return self._blocks[key]


# ---------------------------------------------------------------- Newton


@dataclass
class NewtonInfo:
    iterations: int = 0
    gmres_iterations: int = 0
    residual_history: list = field(default_factory=list)
    gmres_per_newton: list = field(default_factory=list)
    converged: bool = True
    reason: str = ""
    sigma_defect: float = 0.0


def newton_solve(space: DiscreteSpace, spec: SolveSpec, cfg: SolverConfig, X0: ExtendedState,
                 precond: PreconditionerManager | None = None):
    """Solve G(X) = 0 starting from X0; returns (X, NewtonInfo).

    Stops once ||G|| <= tol_newton_rel ||G(X0)|| or ||dW|| <= tol_newton_abs.
    """
    if precond is None:
        precond = PreconditionerManager(space, cfg)
    shape = space.field_shape
    W, sigma = np.array(X0.W, dtype=float), np.array(X0.sigma, dtype=float)
    lin = Linearization(space, W, sigma)
    G = _residual_from(spec, lin)
    g0 = G.norm()
    info = NewtonInfo(residual_history=[g0])
    if g0 <= cfg.tol_residual_abs:
        info.reason = "initial residual below absolute floor"
        info.sigma_defect = float(np.linalg.norm(G.sigma))
        return ExtendedState(W, sigma), info
    for it in range(cfg.max_newton):
        P = precond.get(lin, spec)
        if cfg.mode == "schur":
            dW, dsig, n_gm = _schur_step(space, spec, cfg, lin, G, P)
        else:
            op = ExtendedJacobian(space, spec, lin, cfg.jvp, cfg.fd_norm)
            try:
                dx, ginfo = gmres(op, -G.flat(), P, cfg.tol_gmres_rel, cfg.gmres_restart,
                                  cfg.max_krylov_total)
            except GMRESNotConverged as exc:
                info.gmres_iterations += exc.iterations
                info.gmres_per_newton.append(exc.iterations)
                raise
            n_gm = ginfo.iterations
            dX = ExtendedState.from_flat(dx, shape)
            dW, dsig = dX.W, dX.sigma
        info.gmres_iterations += n_gm
        info.gmres_per_newton.append(n_gm)
        W = W + dW
        sigma = sigma + dsig
        info.iterations = it + 1
        lin = Linearization(space, W, sigma)
        G = _residual_from(spec, lin)
        gn = G.norm()
        info.residual_history.append(gn)
        if not np.isfinite(gn):
            raise NewtonNotConverged("non-finite Newton residual", info.residual_history)
        dw_norm = float(np.linalg.norm(dW))
        if gn <= cfg.tol_newton_rel * g0:
            info.reason = "relative residual"
            break
        if dw_norm <= cfg.tol_newton_abs:
            info.reason = "absolute increment"
            break
    else:
        raise NewtonNotConverged(
            f"Newton did not converge in {cfg.max_newton} iterations "
            f"(residual {info.residual_history[-1]:.3e}, initial {g0:.3e})",
            info.residual_history,
        )
    info.sigma_defect = float(np.linalg.norm(G.sigma))
    return ExtendedState(W, sigma), info


def _schur_step(space, spec, cfg, lin, G, P):
    op = SchurOperator(space, spec, lin, cfg.jvp, cfg.fd_norm)
    rhs = -G.W + spec.c2 * lin.r2_sigma(G.sigma)
    x, ginfo = gmres(op, rhs.ravel(), P, cfg.tol_gmres_rel, cfg.gmres_restart, cfg.max_krylov_total)
    dW = x.reshape(space.field_shape)
    dsig = -G.sigma + op.k_apply(dW)
    return dW, dsig, ginfo.iterations


def schur_solve(space: DiscreteSpace, spec: SolveSpec, cfg: SolverConfig, X0: ExtendedState,
                precond: PreconditionerManager | None = None):
    """Newton iteration on the Schur complement in W; sigma is recovered per step."""
    if cfg.mode != "schur":
        cfg = SolverConfig(**{**cfg.__dict__, "mode": "schur"})
    return newton_solve(space, spec, cfg, X0, precond)
