import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitflow.constitutive import ClosureSpec, Mode, heat_relaxation_time
from eitflow.fields import sym_to_full
from eitflow.thermo import (
    AdmissibilityError,
    DomainError,
    EquilibriumEOS,
    NonEqEOS,
    check_derivatives,
    total_energy,
)

densities = st.floats(0.2, 5.0)
entropies = st.floats(-1.0, 1.0)
small = st.floats(-2.0, 2.0)


def test_equilibrium_limit():
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.7, beta=0.3)
    rho, s = np.array([1.2, 0.8]), np.array([0.1, -0.3])
    ev = eos.evaluate(rho, s, np.zeros((2, 2, 2)), np.zeros((2, 2)))
    np.testing.assert_allclose(ev.energy, eos.eq.energy(rho, s))
    np.testing.assert_allclose(ev.p_hat, ev.pressure)
    np.testing.assert_array_equal(ev.dq, 0.0)
    np.testing.assert_array_equal(ev.dsigma, 0.0)
    np.testing.assert_allclose(ev.pressure, eos.eq.pressure(rho, s), rtol=1e-14)


def test_quadratic_heat_flux_arithmetic():
    eos = NonEqEOS(EquilibriumEOS(), alpha=2.0)
    rho, s = np.array([1.0]), np.array([0.0])
    ev = eos.evaluate(rho, s, None, np.array([[3.0]]))
    assert ev.energy[0] - ev.eq_energy[0] == pytest.approx(9.0)
    assert ev.dq[0, 0] == pytest.approx(6.0)
    assert ev.p_hat[0] - ev.pressure[0] == pytest.approx(18.0)


def test_relaxation_time_from_coefficients():
    cl = ClosureSpec(mode=Mode.EIT, kappa=1.0, tau1=0.5, t_ref=1.0)
    # alpha = 0.5 at T_ref = 1; at T = 2 the local time kappa T alpha is 1
    assert cl.alpha == pytest.approx(0.5)
    assert heat_relaxation_time(np.array([2.0]), cl, alpha=cl.alpha)[0] == pytest.approx(1.0)


def test_temperature_and_pressure_formulas():
    eq = EquilibriumEOS(K=1.3, gamma_ad=1.6, c_v=0.8, s_ref=0.2)
    rho, s = np.array([0.7, 1.9]), np.array([0.4, -0.5])
    eps = eq.energy(rho, s)
    np.testing.assert_allclose(eq.temperature(rho, s), eps / (eq.c_v * rho))
    _, eps_rho, eps_s = eq.derivatives(rho, s)
    np.testing.assert_allclose(eq.pressure(rho, s), rho * eps_rho + s * eps_s - eps, rtol=1e-13)
    np.testing.assert_allclose(eq.entropy_for_temperature(rho, eq.temperature(rho, s)), s, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(rho=densities, s=entropies, q0=small, q1=small, a=st.floats(0.0, 3.0), b=st.floats(0.0, 3.0), sig=st.lists(small, min_size=3, max_size=3))
def test_modified_pressure_gap(rho, s, q0, q1, a, b, sig):
    eos = NonEqEOS(EquilibriumEOS(), alpha=a, beta=b)
    q = np.array([[q0], [q1]])
    full = sym_to_full(np.array(sig)[:, None], 2)
    ev = eos.evaluate(np.array([rho]), np.array([s]), full, q)
    expected = a * (q0**2 + q1**2) + b * np.sum(full**2)
    np.testing.assert_allclose(ev.p_hat - ev.pressure, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ev.dq, a * q)
    np.testing.assert_allclose(ev.dsigma, b * full)
    # constant coefficients leave the temperature classical; the pressure
    # rho eps_rho + s T - eps_hat loses the flux energy
    np.testing.assert_allclose(ev.temperature, eos.eq.temperature(rho, s), rtol=1e-14)
    flux_energy = 0.5 * expected
    np.testing.assert_allclose(ev.pressure, eos.eq.pressure(rho, s) - flux_energy, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_finite_difference_derivatives(seed):
    rng = np.random.default_rng(seed)
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.4 + rng.random(), beta=0.4 + rng.random())
    rho = 0.5 + rng.random(20)
    s = 0.5 * rng.standard_normal(20)
    rep = check_derivatives(eos, rho, s, 0.3 * rng.standard_normal((3, 20)), 0.3 * rng.standard_normal((2, 20)))
    assert rep.ok, rep.errors
    assert rep.max_error < 1e-8


def test_derivative_error_is_second_order_in_step():
    eos = NonEqEOS(EquilibriumEOS(), alpha=1.0, beta=1.0)
    rho, s = np.array([1.3]), np.array([0.6])
    e1 = check_derivatives(eos, rho, s, h=1e-2, tol=1.0).errors["s"]
    e2 = check_derivatives(eos, rho, s, h=5e-3, tol=1.0).errors["s"]
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_flux_free_energy_has_zero_flux_derivative():
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.0)
    rep = check_derivatives(eos, np.array([1.0]), np.array([0.0]), q=np.array([[0.5]]))
    assert rep.errors["q0"] < 1e-10


def test_nonpositive_density_is_a_domain_error():
    eos = NonEqEOS()
    with pytest.raises(DomainError, match="index"):
        eos.evaluate(np.array([1.0, -0.1]), np.array([0.0, 0.0]))


def test_nonpositive_temperature_is_reported():
    def bad_alpha(rho, s):
        # an energy that decreases with s once q is large
        return 1.0 - s, 0.0 * rho, -np.ones_like(s)

    eos = NonEqEOS(EquilibriumEOS(), alpha=bad_alpha)
    with pytest.raises(AdmissibilityError, match="index"):
        eos.evaluate(np.array([1.0]), np.array([0.0]), None, np.array([[10.0]]))


def test_negative_coefficients_are_rejected():
    with pytest.raises(ValueError):
        NonEqEOS(alpha=-1.0)
    with pytest.raises(ValueError):
        EquilibriumEOS(gamma_ad=1.0)


def test_total_energy_cases():
    eos = NonEqEOS(EquilibriumEOS(), alpha=1.0, beta=1.0)
    rho, s = np.array([1.0, 2.0]), np.array([0.0, 0.3])
    e, _ = total_energy(eos, rho, s, np.zeros((1, 2)))
    np.testing.assert_allclose(e, eos.eq.energy(rho, s))
    e_kin, _ = total_energy(eos, np.array([2.0]), np.array([0.0]), np.array([[3.0]]))
    assert e_kin[0] - eos.eq.energy(2.0, 0.0) == pytest.approx(9.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_flux_energy_is_nonnegative_and_minimal_at_zero(seed):
    rng = np.random.default_rng(seed)
    eos = NonEqEOS(EquilibriumEOS(), alpha=rng.random() + 0.1, beta=rng.random() + 0.1)
    rho = 0.5 + rng.random(10)
    s = rng.standard_normal(10) * 0.3
    q = rng.standard_normal((2, 10))
    sig = sym_to_full(rng.standard_normal((3, 10)), 2)
    ev = eos.evaluate(rho, s, sig, q)
    assert np.all(ev.energy >= eos.eq.energy(rho, s))


def test_equilibrium_energy_is_convex_in_entropy():
    eq = EquilibriumEOS()
    rho, s = np.meshgrid(np.linspace(0.3, 3.0, 15), np.linspace(-1.0, 1.0, 15))
    h = 1e-4
    second = (eq.energy(rho, s + h) - 2 * eq.energy(rho, s) + eq.energy(rho, s - h)) / h**2
    assert np.all(second > 0)


def test_evaluation_is_pointwise_local():
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.5, beta=0.2)
    rng = np.random.default_rng(9)
    rho = 1 + 0.2 * rng.random((6, 6))
    s = 0.1 * rng.standard_normal((6, 6))
    q = rng.standard_normal((2, 6, 6))
    full = eos.evaluate(rho, s, None, q)
    sub = eos.evaluate(rho[2:4, 1:5], s[2:4, 1:5], None, q[:, 2:4, 1:5])
    np.testing.assert_array_equal(sub.energy, full.energy[2:4, 1:5])
    np.testing.assert_array_equal(sub.p_hat, full.p_hat[2:4, 1:5])
