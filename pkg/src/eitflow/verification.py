"""Measurement routines behind ``eitflow verify``.

Each ``measure_*`` function runs one study at pinned desk-scale sizes and
returns a plain dict of measured numbers.  ``SUITES`` turns those numbers
into pass/fail checks against fixed thresholds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import constitutive as cons
from . import diagnostics as diag
from . import finite_dim as fd
from . import material as mat
from .constitutive import ClosureSpec, Mode
from .fields import (
    Grid,
    divergence,
    dev_iso_split,
    gradient,
    partial,
    sym_to_full,
    symmetrize,
)
from .scenario import build_scenario, bundled_names, bundled_path, initial_state, load_scenario, probe_indices
from .solver import BlowUpError, Model, StepControl, initial_fields, momentum_rhs, run, stable_dt
from .thermo import EquilibriumEOS, NonEqEOS, check_derivatives


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: str

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.suite:11s} {self.name:44s} {self.value:12.4e}  {self.threshold}"


def _bundled_config(name):
    import yaml

    return yaml.safe_load(bundled_path(name).read_text())


# 1. energy --------------------------------------------------------------------------


def measure_energy_compensation():
    cfg = _bundled_config("eit_smooth_2d")
    sc = build_scenario(cfg, "eit_smooth_2d")
    st0 = initial_state(sc)
    compensated = run(st0, sc.model, sc.control, record_every=1)
    drift = diag.energy_audit(compensated.record).relative_drift

    leak_model = replace(sc.model, nonequilibrium_stresses=False)
    leaky = run(st0, leak_model, sc.control, record_every=1)
    leak = diag.energy_audit(leaky.record).relative_drift

    # pointwise residual at a common time under (h, dt) -> (h/2, dt/2)
    dt = stable_dt(st0, sc.model, sc.control.cfl)
    residuals = []
    for factor in (1, 2):
        c = json.loads(json.dumps(cfg))
        c["grid"]["n"] = [64 * factor, 64 * factor]
        s = build_scenario(c, "eit_smooth_2d")
        r = run(initial_state(s), s.model, StepControl(dt=dt / factor, n_steps=100 * factor), record_every=10**9)
        residuals.append(float(np.max(np.abs(diag.pointwise_energy_residual(r.state, s.model)))))
    return {
        "relative_drift": drift,
        "control_leak": leak,
        "leak_ratio": leak / drift,
        "residual_coarse": residuals[0],
        "residual_fine": residuals[1],
        "residual_ratio": residuals[0] / residuals[1],
    }


# 2. second law -------------------------------------------------------------------------


def measure_second_law(names=None):
    rows = []
    for name in names or bundled_names():
        sc = load_scenario(bundled_path(name))
        if not sc.model.evolves_fluxes:
            continue
        try:
            record = run(initial_state(sc), sc.model, sc.control, record_every=1, scenario_hash=sc.hash).record
        except BlowUpError as exc:
            # audit what was recorded before the failure
            record = exc.record
        audit = diag.entropy_audit(record)
        rows.append(
            {
                "scenario": name,
                "completed": not record.failed,
                "min_production": audit.min_production,
                "varsigma_nondecreasing": audit.varsigma_nondecreasing,
                "ledger_error": audit.ledger_error,
            }
        )
    return {
        "rows": rows,
        "all_completed": all(r["completed"] for r in rows),
        "min_production": min(r["min_production"] for r in rows),
        "all_nondecreasing": all(r["varsigma_nondecreasing"] for r in rows),
        "max_ledger_error": max(r["ledger_error"] for r in rows),
    }


# 3. CIT limit ----------------------------------------------------------------------------


def measure_cit_limit(taus=(0.4, 0.2, 0.1)):
    sc = load_scenario(bundled_path("cit_limit_1d"))
    st = initial_state(sc)
    study = diag.cit_limit_study(sc.model, st.rho, st.s, st.u, list(taus), sc.control.t_end, sc.control.dt)
    return {"taus": list(taus), "distances": study.distances, "orders": study.orders, "mean_order": study.mean_order}


# 4. second sound --------------------------------------------------------------------------


def _pulse_speed(cfg):
    sc = build_scenario(cfg, "cc_pulse_1d")
    r = run(initial_state(sc), sc.model, sc.control, record_every=1, probes=probe_indices(sc))
    names = list(sc.output["probes"])
    x = sc.grid.coordinates()[0]
    center = float(sc.initial["center"][0])
    dist = [float(x[probe_indices(sc)[n][1]] - center) for n in names]
    return diag.second_sound_speed(r.record.time, [r.record.probes[n] for n in names], dist), sc


def measure_second_sound():
    cfg = _bundled_config("cc_pulse_1d")
    est, sc = _pulse_speed(cfg)
    T0 = float(sc.initial["T0"])
    rho0 = float(sc.initial["rho0"])
    s0 = sc.eq.entropy_for_temperature(rho0, T0)
    oracle = diag.telegraph_speed(sc.closure.kappa, sc.closure.tau1, T0, sc.eq.dT_ds(rho0, s0))

    doubled = json.loads(json.dumps(cfg))
    doubled["closure"]["tau1"] = 2.0 * cfg["closure"]["tau1"]
    doubled["control"]["t_end"] = cfg["control"]["t_end"] * math.sqrt(2.0)
    est2, _ = _pulse_speed(doubled)

    control = json.loads(json.dumps(cfg))
    control["mode"] = "CIT"
    control["closure"] = {"kappa": cfg["closure"]["kappa"]}
    control["grid"]["n"] = 100
    control["control"]["t_end"] = 1.5
    est_cit, _ = _pulse_speed(control)
    return {
        "oracle_speed": oracle,
        "measured_speed": est.speed,
        "relative_error": abs(est.speed - oracle) / oracle,
        "wave_detected": not est.diffusive,
        "doubled_speed": est2.speed,
        "speed_ratio": est2.speed / est.speed,
        "cit_diffusive": est_cit.diffusive,
    }


# 5. objective rates ----------------------------------------------------------------------


def _closed_form_fluxes():
    import sympy as sp

    x0, x1 = sp.symbols("x0 x1", real=True)
    t = sp.Symbol("t", real=True)
    k = 2 * sp.pi
    vector = mat.SpatialFlux([sp.sin(k * x0) * sp.cos(k * x1) + sp.cos(t), 0.5 * sp.cos(k * x0 + t)])
    tensor = mat.SpatialFlux(
        [[sp.cos(k * x0) * (1 + t), sp.sin(k * x1)], [sp.sin(k * x1), sp.cos(k * (x0 + x1)) + t**2]]
    )
    return vector, tensor


def measure_objective_rates():
    vector, tensor = _closed_form_fluxes()
    eps = [4e-3, 2e-3, 1e-3, 5e-4]
    tables = [
        mat.verify_truesdell_identity(mat.shear_family(0.1), vector, eps),
        mat.verify_truesdell_identity(mat.stretch_family(0.3, 0.2), vector, eps),
        mat.verify_truesdell_identity(mat.rotation_family(0.7), tensor, eps),
        mat.verify_truesdell_identity(mat.shear_family(0.1).compose(mat.rotation_family(0.5)), tensor, eps),
    ]
    X = mat.reference_points()
    Q = 0.3 * np.stack([np.sin(2 * np.pi * X[0]), np.cos(2 * np.pi * X[1])])
    S = 0.2 * np.stack(
        [[np.cos(2 * np.pi * X[0]), np.sin(2 * np.pi * X[1])], [np.sin(2 * np.pi * X[1]), 1.0 + 0.0 * X[0]]]
    )
    rho_ref = 1.0 + 0.1 * np.cos(2 * np.pi * X[0])
    s_ref = 0.1 + 0.0 * X[0]
    steps = [2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3]
    for fam in (mat.shear_family(0.1), mat.dilation_family(2, 1.3), mat.rotation_family(0.3)):
        tables.extend(mat.verify_conjugate_identity(fam, mat.QuarticProbeEnergy(), 0.4, X, rho_ref, s_ref, Q, S, steps))
    return {
        "tables": tables,
        "min_order": min(t.observed_order for t in tables),
        "max_terminal_error": max(t.terminal_error for t in tables),
    }


# 6. momentum forms ------------------------------------------------------------------------


def manufactured_state(model, amp=0.05):
    g = model.grid
    X = g.coordinates()
    k = [2 * np.pi / L for L in g.lengths]

    def w(i):
        out = np.ones(g.shape)
        for a in range(g.ndim):
            out = out * np.sin(k[a] * X[a] + 0.4 * (i + 1) + 0.3 * a)
        return out

    rho = 1.0 + amp * w(0)
    s = model.eq.entropy_for_temperature(rho, 1.0 + amp * w(1))
    u = np.stack([amp * w(2 + a) for a in range(g.ndim)])
    q = np.stack([amp * w(5 + a) for a in range(g.ndim)])
    ncomp = 1 if g.ndim == 1 else 3
    sigma = np.stack([amp * w(8 + c) for c in range(ncomp)])
    return initial_fields(model, rho, s, u, sigma, q)


def _smooth_closure():
    return ClosureSpec(mode=Mode.EIT, kappa=0.1, eta=0.05, zeta=0.04, tau1=0.3, tau2=0.3, tau0=0.24)


def measure_momentum_forms(sizes=(32, 64, 128)):
    diffs = []
    for n in sizes:
        g = Grid.uniform(n, 1.0, periodic=True, ndim=2)
        m = Model(g, _smooth_closure())
        st = manufactured_state(m)
        diffs.append(float(np.max(np.abs(momentum_rhs(st, m, "A") - momentum_rhs(st, m, "B")))))
    ratios = [diffs[i] / diffs[i + 1] for i in range(len(diffs) - 1)]
    return {"differences": diffs, "ratios": ratios, "min_ratio": min(ratios)}


# 7. mode reductions -----------------------------------------------------------------------


def _bitwise_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays())) and len(a.arrays()) == len(b.arrays())


def measure_mode_reductions(n_steps=60):
    results = {}
    for periodic in (True, False):
        g = Grid.uniform(32, 1.0, periodic=periodic, ndim=2)
        eit = Model(g, _smooth_closure(), flux_dependence=False)
        cit = Model(g, replace(_smooth_closure(), mode=Mode.CIT, tau1=0.0, tau2=0.0, tau0=0.0))
        st = manufactured_state(cit, amp=0.03)
        ctrl = StepControl(dt=stable_dt(st, cit, 0.2), n_steps=n_steps)
        a = run(initial_fields(eit, st.rho, st.s, st.u), eit, ctrl, record_every=10**9).state
        b = run(st, cit, ctrl, record_every=10**9).state
        results[f"eit_vs_cit_{'periodic' if periodic else 'walls'}"] = _bitwise_equal(a, b)

        inviscid = Model(g, ClosureSpec(mode=Mode.CIT))
        euler = Model(g, ClosureSpec(mode=Mode.EULER))
        ctrl = StepControl(dt=stable_dt(st, euler, 0.2), n_steps=n_steps)
        a = run(initial_fields(inviscid, st.rho, st.s, st.u), inviscid, ctrl, record_every=10**9).state
        b = run(initial_fields(euler, st.rho, st.s, st.u), euler, ctrl, record_every=10**9).state
        results[f"cit_vs_euler_{'periodic' if periodic else 'walls'}"] = _bitwise_equal(a, b)
    results["all"] = all(results.values())
    return results


# 8. Maxwell decomposition -------------------------------------------------------------------


def measure_maxwell_decomposition():
    worst = 0.0
    for periodic in (True, False):
        for ndim in (1, 2):
            g = Grid.uniform(24, 1.0, periodic=periodic, ndim=ndim)
            eta, tau2 = 0.07, 0.3
            cl = ClosureSpec(mode=Mode.EIT, eta=eta, zeta=2.0 * eta / ndim, tau2=tau2, tau0=tau2)
            m = Model(g, cl)
            st = manufactured_state(Model(g, replace(cl, kappa=0.1, tau1=0.2)), amp=0.2)
            P = m.boundary.pad_state(st, g)
            a = cons.maxwell_truesdell_rhs(P.sigma, P.u, g, cl, decomposed=True, padded=not periodic)
            b = cons.maxwell_truesdell_rhs(P.sigma, P.u, g, cl, decomposed=False, padded=not periodic)
            worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    return {"max_relative_difference": worst}


# 9. hierarchy ---------------------------------------------------------------------------------


def relax_hierarchy(T, grid, closure, t_end, dt):
    """Integrate the flux hierarchy at frozen ``T`` and ``u = 0`` (RK4)."""
    n = closure.order
    chain = [np.zeros((grid.ndim,) * k + grid.shape) for k in range(1, n + 1)]
    u = np.zeros((grid.ndim,) + grid.shape)

    def f(ch):
        return cons.higher_order_rhs(ch, T, u, grid, closure)

    steps = int(math.ceil(t_end / dt))
    for _ in range(steps):
        k1 = f(chain)
        k2 = f([c + 0.5 * dt * k for c, k in zip(chain, k1)])
        k3 = f([c + 0.5 * dt * k for c, k in zip(chain, k2)])
        k4 = f([c + dt * k for c, k in zip(chain, k3)])
        chain = [c + dt * (a + 2 * b + 2 * cc + d) / 6.0 for c, a, b, cc, d in zip(chain, k1, k2, k3, k4)]
    return chain


def measure_hierarchy():
    g = Grid.uniform(64, 1.0, periodic=True, ndim=1)
    x = g.coordinates()[0]
    T = 1.0 + 0.1 * np.sin(2 * np.pi * x)
    u = 0.05 * np.cos(2 * np.pi * x)[None]
    q = 0.02 * np.sin(4 * np.pi * x)[None]
    one = ClosureSpec(mode=Mode.EIT_HIGHER, kappa=0.3, tau1=0.2, order=1)
    cc = cons.cattaneo_christov_rhs(q, T, u, g, one)
    chain = cons.higher_order_rhs([q], T, u, g, one)[0]
    alpha = one.alpha
    cc_local = cons.cattaneo_christov_rhs(q, T, u, g, one, alpha=alpha)
    chain_local = cons.higher_order_rhs([q], T, u, g, one, t_ref=one.t_ref)[0]
    n1_exact = bool(np.array_equal(cc, chain))
    n1_local = float(np.max(np.abs(cc_local - chain_local)) / np.max(np.abs(cc_local)))

    # run level: EIT_HIGHER (n = 1) against EIT
    g2 = Grid.uniform(48, 1.0, periodic=True, ndim=1)
    m_eit = Model(g2, ClosureSpec(mode=Mode.EIT, kappa=0.3, tau1=0.2))
    m_h1 = Model(g2, one)
    st = manufactured_state(Model(g2, ClosureSpec(mode=Mode.EIT, kappa=0.3, tau1=0.2)), amp=0.05)
    ctrl = StepControl(dt=stable_dt(st, m_eit, 0.2), n_steps=100)
    a = run(st, m_eit, ctrl, record_every=10**9).state
    b = run(initial_fields(m_h1, st.rho, st.s, st.u, None, st.q), m_h1, ctrl, record_every=10**9).state
    run_diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a.arrays(), b.arrays()))

    # n = 2 frozen-field stationary residuals
    two = ClosureSpec(mode=Mode.EIT_HIGHER, kappa=0.3, tau1=0.2, order=2, chain_kappa=(0.05,), chain_tau=(0.1,))
    h = g.spacing[0]
    speed = math.sqrt(max(two.chain_kappa[0] / two.tau1, two.kappa / two.tau1))
    dt = min(0.2 * h / speed, 0.05)
    q1, q2 = relax_hierarchy(T, g, two, t_end=40.0 * max(two.tau1, two.chain_tau[0]), dt=dt)
    r1 = q1 + two.kappa * gradient(T, g) + two.tau1 * divergence(q2, g)
    r2 = q2 + two.chain_kappa[0] * symmetrize(gradient(q1, g), 2)
    scale = float(np.max(np.abs(q1)))
    return {
        "n1_bitwise": n1_exact,
        "n1_local_relative": n1_local,
        "n1_run_difference": run_diff,
        "n2_residual_q1": float(np.max(np.abs(r1))) / scale,
        "n2_residual_q2": float(np.max(np.abs(r2))) / scale,
    }


# 10. finite-dimensional sandbox ----------------------------------------------------------------


def measure_finite_dim():
    system, initial = fd.two_box_demo()
    traj = fd.integrate(system, initial, 40.0, n_samples=2001)
    audit = fd.audit(traj)

    still = fd.FiniteState(np.zeros(2), np.zeros(2), np.array([0.6, -0.3]), np.zeros(2), np.zeros(2))
    frozen = fd.FiniteSystem(
        masses=system.masses,
        stiffness=system.stiffness,
        heat_capacity=system.heat_capacity,
        friction=(0.0, 0.0),
        conductance=system.conductance,
    )
    tr2 = fd.integrate(frozen, still, 60.0, n_samples=601)
    a2 = fd.audit(tr2)
    T = frozen.temperatures(tr2.y[4:6])
    hot, cold = (0, 1) if T[0, 0] > T[1, 0] else (1, 0)
    hot_cools = bool(np.all(np.diff(T[hot]) <= 1e-9))
    cold_warms = bool(np.all(np.diff(T[cold]) >= -1e-9))
    eq_gap = float(abs(T[0, -1] - T[1, -1]))
    rates = fd.rhs(frozen, np.concatenate([np.zeros(4), np.array([0.0, 0.0]), np.zeros(4)]))
    equilibrium_rest = float(np.max(np.abs(rates)[4:8]))
    return {
        "energy_drift": max(audit.energy_drift, a2.energy_drift),
        "sigma_nondecreasing": audit.sigma_nondecreasing and a2.sigma_nondecreasing,
        "min_sigma_rate": min(audit.min_sigma_rate, a2.min_sigma_rate),
        "hot_to_cold": hot_cools and cold_warms,
        "equilibrium_gap": eq_gap,
        "equal_temperature_rates": equilibrium_rest,
    }


# module-level invariant suites -------------------------------------------------------------------


def check_fields():
    out = []
    errs = []
    for n in (32, 64):
        g = Grid.uniform(n, 1.0, periodic=True, ndim=2)
        X = g.coordinates()
        f = np.sin(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])
        exact = 2 * np.pi * np.cos(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])
        errs.append(float(np.max(np.abs(partial(f, 0, g) - exact))))
    out.append(Check("fields", "gradient order", math.log2(errs[0] / errs[1]) > 1.9, math.log2(errs[0] / errs[1]), "> 1.9"))
    g = Grid.uniform(16, 1.0, periodic=True, ndim=2)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    skew = abs(g.integrate(a * partial(b, 0, g)) + g.integrate(b * partial(a, 0, g)))
    out.append(Check("fields", "summation by parts (periodic)", skew < 1e-12, skew, "< 1e-12"))
    sig = rng.standard_normal((3,) + g.shape)
    dev, pv = dev_iso_split(sig, 2)
    back = dev.copy()
    back[0] += pv
    back[2] += pv
    err = float(np.max(np.abs(back - sig)))
    out.append(Check("fields", "deviator/volumetric round trip", err < 1e-14, err, "< 1e-14"))
    return out


def check_thermo():
    rng = np.random.default_rng(1)
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.7, beta=0.4)
    rho = 1.0 + 0.3 * rng.random(50)
    s = 0.2 * rng.standard_normal(50)
    rep = check_derivatives(eos, rho, s, 0.1 * rng.standard_normal((3, 50)), 0.1 * rng.standard_normal((2, 50)))
    out = [Check("thermo", "analytic vs numeric derivatives", rep.ok, rep.max_error, "< 1e-6")]
    q = 0.1 * rng.standard_normal((2, 50))
    sig = sym_to_full(0.1 * rng.standard_normal((3, 50)), 2)
    ev = eos.evaluate(rho, s, sig, q)
    gap = ev.p_hat - ev.pressure - (0.7 * np.sum(q * q, axis=0) + 0.4 * np.sum(sig * sig, axis=(0, 1)))
    out.append(Check("thermo", "modified pressure identity", float(np.max(np.abs(gap))) < 1e-14, float(np.max(np.abs(gap))), "< 1e-14"))
    return out


def check_material():
    m = measure_objective_rates()
    return [
        Check("material", "identity convergence order", m["min_order"] >= 1.9, m["min_order"], ">= 1.9"),
        Check("material", "terminal relative error", m["max_terminal_error"] < 1e-5, m["max_terminal_error"], "< 1e-5"),
    ]


def check_finite_dim():
    m = measure_finite_dim()
    return [
        Check("finite-dim", "energy drift", m["energy_drift"] < 1e-9, m["energy_drift"], "< 1e-9"),
        Check("finite-dim", "internal entropy nondecreasing", m["sigma_nondecreasing"], m["min_sigma_rate"], "rate >= 0"),
        Check("finite-dim", "heat flows hot to cold", m["hot_to_cold"], m["equilibrium_gap"], "monotone"),
        Check("finite-dim", "equal temperatures are stationary", m["equal_temperature_rates"] < 1e-14, m["equal_temperature_rates"], "< 1e-14"),
    ]


def check_balances():
    out = []
    e = measure_energy_compensation()
    out.append(Check("balances", "energy drift (eit_smooth_2d)", e["relative_drift"] < 1e-7, e["relative_drift"], "< 1e-7"))
    out.append(Check("balances", "energy residual refinement", e["residual_ratio"] >= 3.5, e["residual_ratio"], ">= 3.5"))
    out.append(Check("balances", "stress-free control leak ratio", e["leak_ratio"] >= 100, e["leak_ratio"], ">= 100"))
    s = measure_second_law()
    out.append(Check("balances", "bundled flux runs complete", s["all_completed"], float(s["all_completed"]), "true"))
    out.append(Check("balances", "min entropy production", s["min_production"] >= -1e-10, s["min_production"], ">= -1e-10"))
    out.append(Check("balances", "internal entropy nondecreasing", s["all_nondecreasing"], float(s["all_nondecreasing"]), "true"))
    out.append(Check("balances", "entropy ledger", s["max_ledger_error"] < 1e-8, s["max_ledger_error"], "< 1e-8"))
    c = measure_cit_limit()
    out.append(Check("balances", "CIT limit order in tau", all(abs(o - 1.0) <= 0.3 for o in c["orders"]), c["mean_order"], "1.0 +/- 0.3"))
    w = measure_second_sound()
    out.append(Check("balances", "second sound vs dispersion relation", w["relative_error"] < 0.05 and w["wave_detected"], w["relative_error"], "< 5%"))
    out.append(Check("balances", "tau1 doubling speed ratio", abs(w["speed_ratio"] / 2**-0.5 - 1) < 0.05, w["speed_ratio"], "2^-1/2 +/- 5%"))
    out.append(Check("balances", "CIT control is diffusive", w["cit_diffusive"], float(w["cit_diffusive"]), "true"))
    f = measure_momentum_forms()
    out.append(Check("balances", "momentum forms A/B refinement", f["min_ratio"] >= 3.5, f["min_ratio"], ">= 3.5"))
    r = measure_mode_reductions()
    out.append(Check("balances", "mode reductions bit-for-bit", r["all"], float(r["all"]), "true"))
    mx = measure_maxwell_decomposition()
    out.append(Check("balances", "Maxwell decomposition", mx["max_relative_difference"] < 1e-13, mx["max_relative_difference"], "< 1e-13"))
    h = measure_hierarchy()
    out.append(Check("balances", "n = 1 chain equals Cattaneo-Christov", h["n1_bitwise"], h["n1_local_relative"], "bitwise"))
    worst = max(h["n2_residual_q1"], h["n2_residual_q2"])
    out.append(Check("balances", "n = 2 stationary residuals", worst < 1e-6, worst, "< 1e-6"))
    return out


SUITES = {
    "fields": check_fields,
    "thermo": check_thermo,
    "material": check_material,
    "finite-dim": check_finite_dim,
    "balances": check_balances,
}


def run_suite(name):
    if name == "all":
        checks = []
        for fn in SUITES.values():
            checks.extend(fn())
        return checks
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}")
    return SUITES[name]()
