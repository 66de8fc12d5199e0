"""Physical models: linear advection, scaled compressible Euler and Navier-Stokes.

States are arrays whose last axis holds the conserved variables. Gradient
blocks for Navier-Stokes have trailing shape (3, 2): (v1, v2, T) by (x, y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InadmissibleStateError(ValueError):
    """Raised for non-finite states or non-positive density/pressure."""

    def __init__(self, message, state=None, location=None):
        super().__init__(message)
        self.state = state
        self.location = location


def _as_state(w):
    return np.asarray(w, dtype=float)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(np.asarray(a)))[0]
            raise InadmissibleStateError(f"non-finite input at index {bad}", state=a)


@dataclass(frozen=True)
class LinearAdvection:
    """w_t + div(a w) = 0 with constant velocity a."""

    a: tuple[float, float] = (0.3, 0.3)

    kind = "advection"
    n_var = 1
    is_linear = True
    has_viscous = False
    eps = 1.0

    def check_admissible(self, w):
        _check_finite(w)

    def flux_dir(self, w, d):
        return self.a[d] * w

    def flux_dir_jvp(self, w, v, d):
        return self.a[d] * v

    def physical_flux(self, w):
        w = _as_state(w)
        self.check_admissible(w)
        return self.a[0] * w, self.a[1] * w

    def flux_jacobian_apply(self, w, v):
        v = _as_state(v)
        self.check_admissible(w)
        return self.a[0] * v, self.a[1] * v

    def lf_dissipation(self, d):
        return abs(self.a[d])

    def lax_friedrichs(self, wL, wR, n):
        wL, wR = _as_state(wL), _as_state(wR)
        self.check_admissible(wL)
        self.check_admissible(wR)
        an = self.a[0] * n[0] + self.a[1] * n[1]
        return 0.5 * an * (wL + wR) + abs(an) * (wL - wR)

    def linearized_lf(self, wL, wR, sL, sR, n):
        return self.lax_friedrichs(sL, sR, n)


@dataclass(frozen=True)
class Euler:
    """Compressible Euler equations scaled by a reference Mach number eps.

    w = (rho, rho v1, rho v2, E), p = (gamma - 1)(E - eps^2/2 rho |v|^2) and
    the momentum flux carries p / eps^2.
    """

    gamma: float = 1.4
    eps: float = 1.0

    kind = "euler"
    n_var = 4
    is_linear = False
    has_viscous = False

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def _pressure(self, w):
        rho = w[..., 0]
        ke = (w[..., 1] ** 2 + w[..., 2] ** 2) / rho
        return (self.gamma - 1.0) * (w[..., 3] - 0.5 * self.eps**2 * ke)

    def check_admissible(self, w):
        w = _as_state(w)
        _check_finite(w)
        rho = w[..., 0]
        if np.any(rho <= 0.0):
            bad = tuple(int(i) for i in np.argwhere(rho <= 0.0)[0])
            raise InadmissibleStateError(
                f"non-positive density at index {bad}", state=w[bad]
            )
        p = self._pressure(w)
        if np.any(p < 0.0):
            bad = tuple(int(i) for i in np.argwhere(p < 0.0)[0])
            raise InadmissibleStateError(
                f"negative pressure {p[bad]:.6g} at index {bad}",
                state=w[bad],
            )

    def pressure(self, w):
        w = _as_state(w)
        _check_finite(w)
        if np.any(w[..., 0] <= 0.0):
            raise InadmissibleStateError("non-positive density", state=w)
        return self._pressure(w)

    def flux_dir(self, w, d):
        rho = w[..., 0]
        md = w[..., 1 + d]
        vd = md / rho
        p = self._pressure(w)
        f = np.empty_like(w)
        f[..., 0] = md
        f[..., 1] = w[..., 1] * vd
        f[..., 2] = w[..., 2] * vd
        f[..., 1 + d] += p / self.eps**2
        f[..., 3] = vd * (w[..., 3] + p)
        return f

    def flux_dir_jvp(self, w, s, d):
        """(dF_d/dw) s in closed form."""
        g1 = self.gamma - 1.0
        e2 = self.eps**2
        rho = w[..., 0]
        v1 = w[..., 1] / rho
        v2 = w[..., 2] / rho
        p = g1 * (w[..., 3] - 0.5 * e2 * rho * (v1 * v1 + v2 * v2))
        drho, dm1, dm2, dE = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
        dp = g1 * (dE - e2 * (v1 * dm1 + v2 * dm2) + 0.5 * e2 * (v1 * v1 + v2 * v2) * drho)
        vd = v1 if d == 0 else v2
        dmd = s[..., 1 + d]
        dvd = (dmd - vd * drho) / rho
        out = np.empty(np.broadcast(w, s).shape)
        out[..., 0] = dmd
        out[..., 1] = v1 * dmd + vd * (dm1 - v1 * drho)
        out[..., 2] = v2 * dmd + vd * (dm2 - v2 * drho)
        out[..., 1 + d] += dp / e2
        out[..., 3] = dvd * (w[..., 3] + p) + vd * (dE + dp)
        return out

    def physical_flux(self, w):
        w = _as_state(w)
        self.check_admissible(w)
        return self.flux_dir(w, 0), self.flux_dir(w, 1)

    def flux_jacobian_apply(self, w, v):
        w, v = _as_state(w), _as_state(v)
        self.check_admissible(w)
        _check_finite(v)
        return self.flux_dir_jvp(w, v, 0), self.flux_dir_jvp(w, v, 1)

    def lf_dissipation(self, d=None):
        return np.array([1.0 / self.eps, 1.0, 1.0, 1.0 / self.eps])

    def lax_friedrichs(self, wL, wR, n):
        wL, wR = _as_state(wL), _as_state(wR)
        self.check_admissible(wL)
        self.check_admissible(wR)
        avg = 0.5 * (
            n[0] * (self.flux_dir(wL, 0) + self.flux_dir(wR, 0))
            + n[1] * (self.flux_dir(wL, 1) + self.flux_dir(wR, 1))
        )
        return avg + self.lf_dissipation() * (wL - wR)

    def linearized_lf(self, wL, wR, sL, sR, n):
        wL, wR, sL, sR = (_as_state(a) for a in (wL, wR, sL, sR))
        self.check_admissible(wL)
        self.check_admissible(wR)
        avg = 0.5 * (
            n[0] * (self.flux_dir_jvp(wL, sL, 0) + self.flux_dir_jvp(wR, sR, 0))
            + n[1] * (self.flux_dir_jvp(wL, sL, 1) + self.flux_dir_jvp(wR, sR, 1))
        )
        return avg + self.lf_dissipation() * (sL - sR)


@dataclass(frozen=True)
class NavierStokes(Euler):
    """Euler flux minus the viscous flux (0, tau, tau.v + q)."""

    mu: float = 1e-3
    prandtl: float = 0.72

    kind = "navier_stokes"
    has_viscous = True

    def __post_init__(self):
        super().__post_init__()
        if self.mu < 0.0:
            raise ValueError(f"viscosity must be nonnegative, got {self.mu}")
        if not self.prandtl > 0.0:
            raise ValueError(f"Prandtl number must be positive, got {self.prandtl}")

    @property
    def gas_constant(self) -> float:
        return 1.0 / (self.gamma * self.eps**2)

    @property
    def cp(self) -> float:
        return self.gas_constant * self.gamma / (self.gamma - 1.0)

    @property
    def conductivity(self) -> float:
        return self.cp * self.mu / self.prandtl

    def _grad_vars(self, w):
        rho = w[..., 0]
        g = np.empty(w.shape[:-1] + (3,))
        g[..., 0] = w[..., 1] / rho
        g[..., 1] = w[..., 2] / rho
        g[..., 2] = self.gamma * self.eps**2 * self._pressure(w) / rho
        return g

    def _grad_vars_jvp(self, w, s):
        g1 = self.gamma - 1.0
        e2 = self.eps**2
        rho = w[..., 0]
        v1 = w[..., 1] / rho
        v2 = w[..., 2] / rho
        p = g1 * (w[..., 3] - 0.5 * e2 * rho * (v1 * v1 + v2 * v2))
        drho, dm1, dm2, dE = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
        dp = g1 * (dE - e2 * (v1 * dm1 + v2 * dm2) + 0.5 * e2 * (v1 * v1 + v2 * v2) * drho)
        out = np.empty(np.broadcast(w, s).shape[:-1] + (3,))
        out[..., 0] = (dm1 - v1 * drho) / rho
        out[..., 1] = (dm2 - v2 * drho) / rho
        out[..., 2] = self.gamma * e2 * (dp - p * drho / rho) / rho
        return out

    def grad_vars(self, w):
        w = _as_state(w)
        self.check_admissible(w)
        return self._grad_vars(w)

    def grad_vars_jacobian_apply(self, w, v):
        w, v = _as_state(w), _as_state(v)
        self.check_admissible(w)
        return self._grad_vars_jvp(w, v)

    def _stress(self, d):
        """tau[..., k, l] from the velocity rows of d."""
        gv = d[..., :2, :]
        div = gv[..., 0, 0] + gv[..., 1, 1]
        tau = self.mu * (gv + np.swapaxes(gv, -1, -2))
        tau[..., 0, 0] -= (2.0 / 3.0) * self.mu * div
        tau[..., 1, 1] -= (2.0 / 3.0) * self.mu * div
        return tau

    def viscous_flux_dir(self, w, d, l):
        rho = w[..., 0]
        v1 = w[..., 1] / rho
        v2 = w[..., 2] / rho
        tau = self._stress(d)
        out = np.zeros(np.broadcast(w[..., 0], d[..., 0, 0]).shape + (4,))
        out[..., 1] = tau[..., 0, l]
        out[..., 2] = tau[..., 1, l]
        out[..., 3] = tau[..., 0, l] * v1 + tau[..., 1, l] * v2 + self.conductivity * d[..., 2, l]
        return out

    def viscous_flux_dir_jvp(self, w, d, s, eta, l):
        """(dFv/dw) s + (dFv/dd) eta for direction l."""
        rho = w[..., 0]
        v1 = w[..., 1] / rho
        v2 = w[..., 2] / rho
        dv1 = (s[..., 1] - v1 * s[..., 0]) / rho
        dv2 = (s[..., 2] - v2 * s[..., 0]) / rho
        tau = self._stress(d)
        tau_eta = self._stress(eta)
        shape = np.broadcast(w[..., 0], d[..., 0, 0], s[..., 0], eta[..., 0, 0]).shape
        out = np.zeros(shape + (4,))
        out[..., 1] = tau_eta[..., 0, l]
        out[..., 2] = tau_eta[..., 1, l]
        out[..., 3] = (
            tau_eta[..., 0, l] * v1
            + tau_eta[..., 1, l] * v2
            + tau[..., 0, l] * dv1
            + tau[..., 1, l] * dv2
            + self.conductivity * eta[..., 2, l]
        )
        return out

    def viscous_flux(self, w, d):
        w, d = _as_state(w), _as_state(d)
        _check_finite(w, d)
        return self.viscous_flux_dir(w, d, 0), self.viscous_flux_dir(w, d, 1)


def make_equation(kind: str, **params):
    """Build an equation system from a variant tag and keyword parameters."""
    if kind == "advection":
        a = params.get("a", (0.3, 0.3))
        return LinearAdvection(a=(float(a[0]), float(a[1])))
    if kind == "euler":
        return Euler(gamma=params.get("gamma", 1.4), eps=params.get("eps", 1.0))
    if kind == "navier_stokes":
        return NavierStokes(
            gamma=params.get("gamma", 1.4),
            eps=params.get("eps", 1.0),
            mu=params.get("mu", 1e-3),
            prandtl=params.get("prandtl", 0.72),
        )
    raise ValueError(f"unknown equation kind {kind!r}")
