from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitflow import diagnostics as diag
from eitflow.constitutive import ClosureSpec, Mode
from eitflow.fields import Grid, gradient
from eitflow.solver import (
    BlowUpError,
    BoundaryPolicy,
    FieldSet,
    Model,
    StepControl,
    continuity_rhs,
    evaluate_rhs,
    initial_fields,
    momentum_rhs,
    run,
    stable_dt,
    step,
    wave_speed,
)
from eitflow.thermo import AdmissibilityError
from eitflow.verification import manufactured_state

CLOSURES = {
    "EULER": ClosureSpec(mode=Mode.EULER),
    "CIT": ClosureSpec(mode=Mode.CIT, kappa=0.1, eta=0.05, zeta=0.02),
    "EIT": ClosureSpec(mode=Mode.EIT, kappa=0.1, eta=0.05, zeta=0.04, tau1=0.2, tau2=0.2, tau0=0.16),
    "EIT_JS": ClosureSpec(mode=Mode.EIT_JS, kappa=0.1, eta=0.05, zeta=0.04, tau1=0.2, tau2=0.2, tau0=0.16, gamma1=0.3, gamma2=0.2),
    "EIT_HIGHER": ClosureSpec(mode=Mode.EIT_HIGHER, kappa=0.1, tau1=0.2, order=2, chain_kappa=(0.05,), chain_tau=(0.1,)),
}


def grid(n=16, ndim=2, periodic=True):
    return Grid.uniform(n, 1.0, periodic=periodic, ndim=ndim)


def rest_state(model, T=1.3, rho=0.9):
    g = model.grid
    rho_ = np.full(g.shape, rho)
    s = model.eq.entropy_for_temperature(rho_, np.full(g.shape, T))
    return initial_fields(model, rho_, s, np.zeros((g.ndim,) + g.shape))


# fixed points and reductions ---------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(CLOSURES))
@pytest.mark.parametrize("periodic", [True, False], ids=["periodic", "walls"])
def test_uniform_rest_is_stationary_in_every_mode(name, periodic):
    ndim = 1 if name == "EIT_HIGHER" else 2
    m = Model(grid(12, ndim, periodic), CLOSURES[name])
    st0 = rest_state(m)
    new, info = step(st0, m, 0.01)
    for a, b in zip(st0.arrays()[:-2], new.arrays()[:-2]):
        np.testing.assert_allclose(b, a, rtol=1e-14, atol=1e-15)
    assert info.production_integral == 0.0
    # gamma accumulates the temperature, varsigma stays at zero
    np.testing.assert_allclose(new.gamma, 0.01 * m.eq.temperature(st0.rho, st0.s), rtol=1e-13)
    np.testing.assert_array_equal(new.varsigma, 0.0)


def test_flux_free_momentum_is_pressure_gradient():
    g = grid(32)
    m = Model(g, CLOSURES["EULER"])
    X, Y = 2 * np.pi * g.coordinates()
    rho = 1 + 0.1 * np.sin(X)
    s = 0.05 * np.cos(Y) * rho
    st0 = initial_fields(m, rho, s, np.zeros((2,) + g.shape))
    np.testing.assert_allclose(momentum_rhs(st0, m), -gradient(m.eq.pressure(rho, s), g), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(momentum_rhs(st0, m, form="B"), momentum_rhs(st0, m, form="A"), rtol=0.05, atol=1e-3)


def test_momentum_forms_converge_together():
    diffs = []
    for n in (32, 64):
        m = Model(grid(n), CLOSURES["EIT"])
        st0 = manufactured_state(m, amp=0.05)
        diffs.append(np.max(np.abs(momentum_rhs(st0, m, "A") - momentum_rhs(st0, m, "B"))))
    assert diffs[0] / diffs[1] >= 3.5


# continuity ----------------------------------------------------------------------------------


def test_continuity_vanishes_at_rest_and_for_solenoidal_flow():
    g = grid(16)
    m = Model(g, CLOSURES["EULER"])
    X, Y = 2 * np.pi * g.coordinates()
    st0 = initial_fields(m, 1 + 0.1 * np.sin(X), np.zeros(g.shape), np.zeros((2,) + g.shape))
    np.testing.assert_array_equal(continuity_rhs(st0, m), 0.0)
    # stream function psi = sin X sin Y gives a discretely divergence-free field
    u = np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)])
    st1 = initial_fields(m, np.ones(g.shape), np.zeros(g.shape), u)
    assert np.max(np.abs(continuity_rhs(st1, m))) < 1e-1
    # a uniform-density field with div-free central differences: shear flow
    u_shear = np.stack([np.sin(Y), np.zeros_like(Y)])
    st2 = initial_fields(m, np.ones(g.shape), np.zeros(g.shape), u_shear)
    np.testing.assert_allclose(continuity_rhs(st2, m), 0.0, atol=1e-14)


def test_bump_advected_for_one_period():
    errors = []
    for n in (64, 128):
        g = grid(n, ndim=1)
        m = Model(g, CLOSURES["EULER"])
        x = g.coordinates()[0]
        rho0 = 1 + 0.2 * np.exp(np.cos(2 * np.pi * x) - 1)
        u = np.ones((1,) + g.shape)
        dt = 0.2 * g.spacing[0]
        steps = int(round(1.0 / dt))
        rho = rho0.copy()
        for _ in range(steps):
            f = lambda r: continuity_rhs(FieldSet(r, np.zeros_like(r), u), m)
            k1 = f(rho)
            k2 = f(rho + 0.5 * dt * k1)
            k3 = f(rho + 0.5 * dt * k2)
            k4 = f(rho + dt * k3)
            rho = rho + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        assert abs(g.integrate(rho) - g.integrate(rho0)) < 1e-12 * g.integrate(rho0)
        errors.append(np.max(np.abs(rho - rho0)))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)


# stepping -------------------------------------------------------------------------------------


def test_rk4_dt_halving_is_fourth_order():
    m = Model(grid(16), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    dt = stable_dt(st0, m, 0.4)
    finals = []
    for k in (1, 2, 4):
        cur = st0
        for _ in range(8 * k):
            cur, _ = step(cur, m, dt / k)
        finals.append(cur.flatten())
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert ratio == pytest.approx(16.0, rel=0.2)


def test_ssp_rk3_is_third_order():
    m = Model(grid(16), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    dt = stable_dt(st0, m, 0.4)
    finals = []
    for k in (1, 2, 4):
        cur = st0
        for _ in range(8 * k):
            cur, _ = step(cur, m, dt / k, scheme="SSP-RK3")
        finals.append(cur.flatten())
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert ratio == pytest.approx(8.0, rel=0.2)


@pytest.mark.parametrize("periodic", [True, False], ids=["periodic", "walls"])
def test_mass_is_conserved_per_step(periodic):
    m = Model(grid(16, periodic=periodic), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    mass0 = m.grid.integrate(st0.rho)
    cur = st0
    for _ in range(10):
        cur, _ = step(cur, m, stable_dt(st0, m, 0.2))
        assert abs(m.grid.integrate(cur.rho) - mass0) < 1e-13 * mass0


def test_step_commutes_with_periodic_shift():
    m = Model(grid(16), CLOSURES["EIT_JS"])
    st0 = manufactured_state(m, amp=0.05)
    shift = lambda a: np.roll(a, (5, 2), axis=(-2, -1))
    moved = st0.unflatten(np.concatenate([np.ravel(shift(a)) for a in st0.arrays()]))
    a, _ = step(st0, m, 0.01)
    b, _ = step(moved, m, 0.01)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(shift(x), y)


def test_bookkeeping_fields_do_not_feed_back():
    m = Model(grid(12), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    tagged = replace(st0, gamma=np.full_like(st0.rho, 7.0), varsigma=np.full_like(st0.rho, -3.0))
    a = evaluate_rhs(st0, m).rates
    b = evaluate_rhs(tagged, m).rates
    # the bookkeeping rates themselves advect their own fields; only the
    # dynamic rates must be blind to them
    for x, y in zip(a.arrays()[:-2], b.arrays()[:-2]):
        np.testing.assert_array_equal(x, y)


def test_field_set_flatten_round_trip():
    m = Model(grid(8, ndim=1), CLOSURES["EIT_HIGHER"])
    st0 = rest_state(m)
    back = st0.unflatten(st0.flatten(), t=2.0)
    assert back.t == 2.0 and len(back.chain) == 1
    for a, b in zip(st0.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)


# step control and failures ---------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(tau=st.floats(0.01, 1.0), amp=st.floats(0.0, 0.3))
def test_stable_dt_respects_wave_and_relaxation_bounds(tau, amp):
    cl = ClosureSpec(mode=Mode.EIT, kappa=0.1, eta=0.05, tau1=tau, tau2=tau)
    m = Model(grid(8), cl)
    st0 = rest_state(m)
    st0.u[0] = amp
    dt = stable_dt(st0, m, 0.2)
    h = min(m.grid.spacing)
    c_s = np.max(np.abs(st0.u[0]) + m.eq.sound_speed(st0.rho, st0.s))
    assert dt <= 0.2 * h / c_s
    assert dt <= 0.2 * tau / 4 * (1 + 1e-12)
    assert wave_speed(st0, m) >= c_s


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported_with_partial_record():
    m = Model(grid(16), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    with pytest.raises(BlowUpError) as info:
        run(st0, m, StepControl(dt=5.0, n_steps=200))
    assert info.value.step is not None and info.value.step >= 1
    assert info.value.record.failed
    assert len(info.value.record.time) >= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_inadmissible_state_raises():
    m = Model(grid(8), CLOSURES["CIT"])
    st0 = rest_state(m)
    st0.rho[2, 3] = -1.0
    with pytest.raises(AdmissibilityError, match=r"\(2, 3\)"):
        evaluate_rhs(st0, m)


def test_unknown_inputs_are_rejected():
    with pytest.raises(ValueError):
        BoundaryPolicy(velocity="sticky")
    with pytest.raises(ValueError):
        Model(grid(8), CLOSURES["EIT"], form="C")
    with pytest.raises(ValueError):
        StepControl(scheme="Euler")


# runs and budgets -----------------------------------------------------------------------------


def test_run_lands_on_t_end_and_records_every_step():
    m = Model(grid(12), CLOSURES["EIT"])
    st0 = manufactured_state(m, amp=0.05)
    res = run(st0, m, StepControl(cfl=0.2, t_end=0.05))
    assert res.state.t == pytest.approx(0.05, abs=1e-14)
    assert len(res.record.time) == res.n_steps + 1
    assert np.all(np.diff(res.record.time) > 0)


@pytest.mark.parametrize("velocity", ["noslip", "slip"])
def test_insulated_walls_keep_energy_inside(velocity):
    g = grid(24, periodic=False)
    m = Model(g, CLOSURES["EIT"], boundary=BoundaryPolicy(velocity))
    X, Y = g.coordinates()
    rho = np.ones(g.shape)
    T = 1 + 0.02 * np.cos(np.pi * X) * np.cos(np.pi * Y)
    st0 = initial_fields(m, rho, m.eq.entropy_for_temperature(rho, T), np.zeros((2,) + g.shape))
    res = run(st0, m, StepControl(cfl=0.2, n_steps=40))
    audit = diag.energy_audit(res.record)
    assert np.max(np.abs(res.record.boundary_energy_flux)) < 1e-6
    assert audit.relative_drift < 1e-6
    assert diag.mass_drift(res.record) < 1e-13


@pytest.mark.parametrize("name", ["EIT", "EIT_JS"])
def test_entropy_ledger_and_positivity(name):
    m = Model(grid(16), CLOSURES[name])
    st0 = manufactured_state(m, amp=0.05)
    res = run(st0, m, StepControl(cfl=0.2, n_steps=30))
    audit = diag.entropy_audit(res.record)
    assert audit.passes()
    assert audit.min_production >= -1e-10


def test_higher_order_run_is_dissipative():
    g = grid(48, ndim=1)
    m = Model(g, CLOSURES["EIT_HIGHER"])
    x = g.coordinates()[0]
    rho = np.ones(g.shape)
    T = 1 + 0.05 * np.sin(2 * np.pi * x)
    st0 = initial_fields(m, rho, m.eq.entropy_for_temperature(rho, T), np.zeros((1,) + g.shape))
    res = run(st0, m, StepControl(cfl=0.2, n_steps=60))
    audit = diag.entropy_audit(res.record)
    assert audit.passes()
    assert diag.energy_audit(res.record).relative_drift < 1e-6
