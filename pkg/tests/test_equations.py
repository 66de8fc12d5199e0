import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdsolve.equations import (
    Euler,
    InadmissibleStateError,
    LinearAdvection,
    NavierStokes,
    make_equation,
)

REST = np.array([1.0, 0.0, 0.0, 2.5])
MOVING = np.array([1.0, 0.3, 0.3, 2.545])


def random_states(rng, n, eq):
    rho = rng.uniform(0.5, 2.0, n)
    v = rng.uniform(-0.8, 0.8, (n, 2))
    p = rng.uniform(0.5, 2.0, n)
    E = p / (eq.gamma - 1) + 0.5 * eq.eps**2 * rho * (v**2).sum(1)
    return np.stack([rho, rho * v[:, 0], rho * v[:, 1], E], axis=-1)


# ---- advection


def test_advection_flux():
    eq = LinearAdvection((0.3, 0.3))
    fx, fy = eq.physical_flux(np.array([2.0]))
    assert fx[0] == pytest.approx(0.6) and fy[0] == pytest.approx(0.6)
    jx, jy = eq.flux_jacobian_apply(np.array([5.0]), np.array([1.0]))
    assert (jx[0], jy[0]) == pytest.approx((0.3, 0.3))


def test_advection_lax_friedrichs_value():
    eq = LinearAdvection((0.3, 0.3))
    assert eq.lax_friedrichs(np.array([1.0]), np.array([0.0]), (1.0, 0.0))[0] == pytest.approx(0.45)


def test_advection_linearized_flux_is_flux_of_sigma():
    eq = LinearAdvection((0.2, -0.7))
    sL, sR = np.array([0.4]), np.array([-1.3])
    n = (0.0, -1.0)
    np.testing.assert_array_equal(eq.linearized_lf([9.0], [3.0], sL, sR, n), eq.lax_friedrichs(sL, sR, n))


# ---- euler


def test_euler_rest_state_flux():
    eq = Euler(eps=1.0)
    assert eq.pressure(REST) == pytest.approx(1.0)
    np.testing.assert_allclose(eq.physical_flux(REST)[0], [0, 1, 0, 0], atol=1e-15)


def test_euler_low_mach_flux_scaling():
    eq = Euler(eps=0.1)
    np.testing.assert_allclose(eq.physical_flux(REST)[0], [0, 100, 0, 0], atol=1e-12)


def test_pressure_examples():
    eq = Euler()
    assert eq.pressure(MOVING) == pytest.approx(0.4 * (2.545 - 0.09), abs=1e-14)
    assert eq.pressure(MOVING) == pytest.approx(0.982, abs=1e-14)
    zero_internal = np.array([2.0, 0.6, -0.4, 0.5 * (0.36 + 0.16) / 2.0])
    assert eq.pressure(zero_internal) == pytest.approx(0.0, abs=1e-15)


def test_pressure_rejects_nonpositive_density():
    with pytest.raises(InadmissibleStateError):
        Euler().pressure(np.array([0.0, 0.0, 0.0, 1.0]))


def test_negative_pressure_carries_state():
    bad = np.array([1.0, 2.0, 0.0, 0.1])
    with pytest.raises(InadmissibleStateError) as info:
        Euler().physical_flux(bad)
    np.testing.assert_array_equal(info.value.state, bad)


def test_nonfinite_rejected():
    with pytest.raises(InadmissibleStateError):
        Euler().physical_flux(np.array([1.0, np.nan, 0.0, 2.5]))


def test_flux_jacobian_matches_difference_quotient():
    eq = Euler()
    v = np.array([1.0, 0.0, 0.0, 0.0])
    h = 1e-7
    fd = (eq.physical_flux(MOVING + h * v)[0] - eq.physical_flux(MOVING)[0]) / h
    ex = eq.flux_jacobian_apply(MOVING, v)[0]
    assert np.linalg.norm(ex - fd) <= 1e-6 * np.linalg.norm(ex)
    np.testing.assert_array_equal(eq.flux_jacobian_apply(MOVING, np.zeros(4))[0], 0.0)


@pytest.mark.parametrize("eps", [1.0, 0.1])
def test_flux_jacobian_on_random_states(eps):
    eq = Euler(eps=eps)
    rng = np.random.default_rng(3)
    W = random_states(rng, 100, eq)
    V = rng.standard_normal(W.shape)
    for d in range(2):
        h = 1e-6 * (1 + np.linalg.norm(W, axis=1, keepdims=True))
        fd = (eq.flux_dir(W + h * V, d) - eq.flux_dir(W - h * V, d)) / (2 * h)
        ex = eq.flux_dir_jvp(W, V, d)
        err = np.linalg.norm(ex - fd, axis=1) / np.linalg.norm(ex, axis=1)
        assert err.max() < 1e-6


def test_lax_friedrichs_dissipation_scaling():
    eq = Euler(eps=0.1)
    wL = REST
    wR = REST + np.array([0.1, 0.1, 0.1, 0.1])
    n = (1.0, 0.0)
    diss = eq.lax_friedrichs(wL, wR, n) - 0.5 * (eq.flux_dir(wL, 0) + eq.flux_dir(wR, 0))
    np.testing.assert_allclose(diss, [-1.0, -0.1, -0.1, -1.0], rtol=1e-12)


def test_lax_friedrichs_consistency():
    eq = Euler()
    f = eq.lax_friedrichs(MOVING, MOVING, (0.0, 1.0))
    np.testing.assert_allclose(f, eq.physical_flux(MOVING)[1], rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]))
def test_numerical_flux_is_conservative(seed, n):
    rng = np.random.default_rng(seed)
    for eq in (Euler(), Euler(eps=0.3), LinearAdvection((0.4, -0.1))):
        if eq.n_var == 1:
            wL, wR = rng.standard_normal(1), rng.standard_normal(1)
        else:
            wL, wR = random_states(rng, 2, eq)
        m = (-n[0], -n[1])
        np.testing.assert_allclose(eq.lax_friedrichs(wL, wR, n), -eq.lax_friedrichs(wR, wL, m),
                                   rtol=0, atol=1e-14)


def test_linearized_lf_matches_difference_quotient():
    eq = Euler()
    rng = np.random.default_rng(5)
    wL, wR = random_states(rng, 2, eq)
    sL, sR = rng.standard_normal((2, 4))
    n = (0.0, 1.0)
    h = 1e-7
    fd = (eq.lax_friedrichs(wL + h * sL, wR + h * sR, n) - eq.lax_friedrichs(wL, wR, n)) / h
    ex = eq.linearized_lf(wL, wR, sL, sR, n)
    assert np.linalg.norm(ex - fd) <= 1e-6 * np.linalg.norm(ex)
    np.testing.assert_array_equal(eq.linearized_lf(wL, wR, np.zeros(4), np.zeros(4), n), 0.0)


# ---- navier-stokes


def test_gas_constants():
    eq = NavierStokes(eps=0.5, mu=2e-3, prandtl=0.72)
    assert eq.gas_constant == pytest.approx(1 / (1.4 * 0.25))
    assert eq.cp == pytest.approx(eq.gas_constant * 1.4 / 0.4)
    assert eq.conductivity == pytest.approx(eq.cp * 2e-3 / 0.72)


def test_grad_vars_at_rest():
    np.testing.assert_allclose(NavierStokes().grad_vars(REST), [0.0, 0.0, 1.4], rtol=1e-15)


def test_grad_vars_jacobian():
    eq = NavierStokes(eps=0.7)
    rng = np.random.default_rng(2)
    W = random_states(rng, 50, eq)
    V = rng.standard_normal(W.shape)
    h = 1e-6
    fd = (eq.grad_vars(W + h * V) - eq.grad_vars(W - h * V)) / (2 * h)
    ex = eq.grad_vars_jacobian_apply(W, V)
    assert np.max(np.linalg.norm(ex - fd, axis=1) / np.linalg.norm(ex, axis=1)) < 1e-6
    # velocity is homogeneous of degree zero in w
    np.testing.assert_allclose(eq.grad_vars_jacobian_apply(W, W)[:, :2], 0.0, atol=1e-13)


def test_viscous_flux_zero_gradient():
    fx, fy = NavierStokes().viscous_flux(MOVING, np.zeros((3, 2)))
    np.testing.assert_array_equal(fx, 0.0)
    np.testing.assert_array_equal(fy, 0.0)


def test_pure_shear_stress():
    eq = NavierStokes(mu=0.01)
    d = np.zeros((3, 2))
    d[0, 1] = 2.0  # dv1/dy
    tau = eq._stress(d)
    np.testing.assert_allclose(tau, [[0.0, 0.02], [0.02, 0.0]], atol=1e-16)


def test_pure_dilatation_stress():
    eq = NavierStokes(mu=0.01)
    d = np.zeros((3, 2))
    d[0, 0] = 3.0  # dv1/dx
    tau = eq._stress(d)
    assert tau[0, 0] == pytest.approx(4 / 3 * 0.03)
    assert tau[1, 1] == pytest.approx(-2 / 3 * 0.03)


def test_viscous_energy_flux():
    eq = NavierStokes(mu=0.01)
    d = np.zeros((3, 2))
    d[0, 1] = 2.0
    d[2, 0] = 0.5
    fx, _ = eq.viscous_flux(MOVING, d)
    # tau_xx = 0, tau_yx = 0.02; energy = tau.v + k dT/dx
    np.testing.assert_allclose(fx, [0.0, 0.0, 0.02, 0.02 * 0.3 + eq.conductivity * 0.5], rtol=1e-14)


def test_viscous_flux_jvp():
    eq = NavierStokes(mu=0.05)
    rng = np.random.default_rng(8)
    W = random_states(rng, 20, eq)
    D = rng.standard_normal((20, 3, 2))
    S = rng.standard_normal(W.shape)
    E = rng.standard_normal(D.shape)
    h = 1e-6
    for l in range(2):
        fd = (eq.viscous_flux_dir(W + h * S, D + h * E, l) - eq.viscous_flux_dir(W - h * S, D - h * E, l)) / (2 * h)
        ex = eq.viscous_flux_dir_jvp(W, D, S, E, l)
        np.testing.assert_allclose(ex, fd, rtol=1e-6, atol=1e-9)


# ---- construction


def test_make_equation_variants():
    assert isinstance(make_equation("advection", a=(1, 2)), LinearAdvection)
    assert make_equation("euler", eps=0.5).eps == 0.5
    ns = make_equation("navier_stokes", mu=0.1)
    assert ns.mu == 0.1 and ns.n_var == 4
    with pytest.raises(ValueError):
        make_equation("burgers")


@pytest.mark.parametrize("kw", [dict(gamma=1.0), dict(eps=0.0)])
def test_invalid_euler_parameters(kw):
    with pytest.raises(ValueError):
        Euler(**kw)


@pytest.mark.parametrize("kw", [dict(mu=-1.0), dict(prandtl=0.0)])
def test_invalid_ns_parameters(kw):
    with pytest.raises(ValueError):
        NavierStokes(**kw)
