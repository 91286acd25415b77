"""Budgets and estimators evaluated along solver runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constitutive import Mode
from .solver import RunRecord, StepControl, evaluate_rhs, initial_fields, run


# energy ---------------------------------------------------------------------------


@dataclass
class EnergyAudit:
    times: np.ndarray
    residual: np.ndarray
    relative_drift: float
    max_relative_residual: float

    def summary(self):
        return f"energy: relative drift {self.relative_drift:.3e}, max |r|/E {self.max_relative_residual:.3e}"


def energy_audit(record: RunRecord):
    """Rate residual ``d/dt int e + boundary flux`` from a run record.

    The time derivative is a centred difference between successive samples,
    the boundary term the trapezoidal mean of the two samples.
    """
    t = np.asarray(record.time)
    E = np.asarray(record.energy)
    B = np.asarray(record.boundary_energy_flux)
    scale = max(abs(E[0]), 1e-300)
    if len(t) < 2:
        return EnergyAudit(t, np.zeros(0), 0.0, 0.0)
    dEdt = np.diff(E) / np.diff(t)
    r = dEdt + 0.5 * (B[1:] + B[:-1])
    flux_integral = np.concatenate([[0.0], np.cumsum(0.5 * (B[1:] + B[:-1]) * np.diff(t))])
    drift = float(np.max(np.abs(E - E[0] + flux_integral)) / scale)
    return EnergyAudit(0.5 * (t[1:] + t[:-1]), r, drift, float(np.max(np.abs(r)) / scale))


def pointwise_energy_residual(state, model):
    """``d_t e + div(e u) - div[(-p I + tau + sigma).u - q]`` on every cell."""
    return evaluate_rhs(state, model, energy_terms=True).energy_residual


# entropy --------------------------------------------------------------------------


@dataclass
class EntropyAudit:
    min_production: float
    entropy_trend: float
    varsigma_nondecreasing: bool
    ledger_error: float

    def passes(self, production_tol=1e-10, ledger_tol=1e-8):
        return self.min_production >= -production_tol and self.varsigma_nondecreasing and self.ledger_error < ledger_tol

    def summary(self):
        return (
            f"entropy: min production {self.min_production:.3e}, "
            f"int s change {self.entropy_trend:.3e}, ledger error {self.ledger_error:.3e}"
        )


def entropy_audit(record: RunRecord, monotone_tol=1e-14):
    """Positivity, total-entropy trend and the internal-entropy ledger.

    The ledger compares ``int varsigma(t) - int varsigma(0)`` with the
    production integral accumulated with the Runge-Kutta weights.
    """
    vs = np.asarray(record.varsigma)
    pi = np.asarray(record.production_integral)
    scale = max(1.0, float(np.max(np.abs(vs))))
    steps = np.diff(vs)
    return EntropyAudit(
        min_production=float(np.min(record.min_production)),
        entropy_trend=float(record.entropy[-1] - record.entropy[0]),
        varsigma_nondecreasing=bool(np.all(steps >= -monotone_tol * scale)),
        ledger_error=float(np.max(np.abs((vs - vs[0]) - pi))),
    )


def mass_drift(record: RunRecord):
    m = np.asarray(record.mass)
    return float(np.max(np.abs(m - m[0])) / abs(m[0]))


# CIT limit ------------------------------------------------------------------------


def state_distance(a, b, grid):
    """L2 distance over ``(rho, u, s)``."""
    sq = (a.rho - b.rho) ** 2 + np.sum((a.u - b.u) ** 2, axis=0) + (a.s - b.s) ** 2
    return math.sqrt(grid.integrate(sq))


@dataclass
class LimitStudy:
    taus: list
    distances: list
    orders: list = field(default_factory=list)

    @property
    def mean_order(self):
        finite = [o for o in self.orders if math.isfinite(o)]
        return float(np.mean(finite)) if finite else float("nan")

    def rows(self):
        out = []
        for i, (t, d) in enumerate(zip(self.taus, self.distances)):
            out.append({"tau": t, "distance": d, "order": self.orders[i - 1] if i else float("nan")})
        return out


def cit_limit_study(model, rho, s, u, taus, t_end, dt, scale_relaxation=None):
    """Distance between EIT runs at relaxation time ``tau`` and the CIT run.

    ``model`` is an EIT model whose closure supplies ``kappa, eta, zeta``;
    ``scale_relaxation(closure, tau)`` returns the closure for a given
    ``tau`` (default: every active relaxation time set to ``tau``, with
    ``tau0`` tied to ``tau2`` by the single-``beta`` rule).  EIT fluxes start
    at their Fourier/Newton-Stokes values, so that the initial layer is
    absent; every run uses the same ``dt``.
    """
    from .solver import cit_fluxes

    cl = model.closure
    nd = model.grid.ndim

    def default_scaling(closure, tau):
        tau2 = tau if closure.shear_active else 0.0
        if closure.shear_active and closure.bulk_active:
            tau0 = nd * closure.zeta * tau / (2.0 * closure.eta)
        else:
            tau0 = tau if closure.bulk_active else 0.0
        return replace(closure, tau1=tau if closure.heat_active else 0.0, tau2=tau2, tau0=tau0)

    scaling = scale_relaxation or default_scaling
    cit_model = replace(model, closure=replace(cl, mode=Mode.CIT, tau1=0.0, tau2=0.0, tau0=0.0, gamma1=0.0, gamma2=0.0))
    start = initial_fields(cit_model, rho, s, u)
    ctrl = StepControl(dt=dt, t_end=t_end)
    reference = run(start, cit_model, ctrl, record_every=10**9).state
    q0, sigma0 = cit_fluxes(start, cit_model)
    distances = []
    for tau in taus:
        if tau == 0:
            distances.append(0.0)
            continue
        m = replace(model, closure=scaling(replace(cl, mode=Mode.EIT if cl.mode is Mode.CIT else cl.mode), tau))
        st = initial_fields(m, rho, s, u, sigma0, q0)
        final = run(st, m, ctrl, record_every=10**9).state
        distances.append(state_distance(final, reference, model.grid))
    orders = []
    for i in range(1, len(taus)):
        if distances[i] > 0 and distances[i - 1] > 0 and taus[i] > 0:
            orders.append(math.log(distances[i - 1] / distances[i]) / math.log(taus[i - 1] / taus[i]))
        else:
            orders.append(float("nan"))
    return LimitStudy(list(taus), distances, orders)


# second sound ---------------------------------------------------------------------


def telegraph_speed(kappa, tau1, T0, dT_ds):
    """Linear second-sound speed ``sqrt(kappa dT/ds / (T0 tau1))``.

    For the perfect-gas energy ``dT/ds = T/(c_v rho)`` so the speed is
    ``sqrt(kappa / (rho c_v tau1))``.
    """
    return math.sqrt(kappa * dT_ds / (T0 * tau1))


def _peak_time(times, values):
    """Time of the global maximum, refined by a parabola through 3 samples.

    Returns ``None`` when the maximum sits at either end of the series.
    """
    i = int(np.argmax(values))
    if i == 0 or i == len(values) - 1:
        return None
    y0, y1, y2 = values[i - 1], values[i], values[i + 1]
    denom = y0 - 2.0 * y1 + y2
    shift = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
    return times[i] + shift * (times[i + 1] - times[i])


@dataclass
class SoundEstimate:
    speed: float
    uncertainty: float
    diffusive: bool
    arrival_times: list
    spacing_ratio: float

    def summary(self):
        if self.diffusive:
            return f"second sound: diffusive (spacing ratio {self.spacing_ratio:.3f})"
        return f"second sound: speed {self.speed:.5f} +/- {self.uncertainty:.1e}"


def second_sound_speed(times, probe_series, distances, wave_threshold=4.0 / 3.0):
    """Estimate the front speed from peak-arrival times at equally spaced probes.

    A travelling front reaches equally spaced probes at equal intervals
    (spacing ratio 1); diffusive spreading puts the peak at ``t ~ x^2`` and
    the ratio near 5/3.  Ratios above ``wave_threshold``, or a probe whose
    signal never peaks, are reported as diffusive.
    """
    times = np.asarray(times)
    arrivals = [_peak_time(times, np.asarray(p)) for p in probe_series]
    if any(a is None for a in arrivals):
        return SoundEstimate(float("nan"), float("nan"), True, arrivals, float("inf"))
    gaps = np.diff(arrivals)
    ratio = float(gaps[-1] / gaps[0]) if len(gaps) >= 2 and gaps[0] > 0 else float("nan")
    diffusive = not (np.isfinite(ratio) and ratio < wave_threshold) or np.any(gaps <= 0)
    slope, intercept = np.polyfit(arrivals, distances, 1)
    resid = np.asarray(distances) - (slope * np.asarray(arrivals) + intercept)
    dt_sample = float(np.median(np.diff(times)))
    spread = float(np.ptp(arrivals)) or 1.0
    uncertainty = abs(slope) * (dt_sample / spread) + float(np.max(np.abs(resid))) / spread
    return SoundEstimate(float(slope), uncertainty, bool(diffusive), list(arrivals), ratio)


def pulse_probe_run(model, T0=1.0, rho0=1.0, amplitude=0.01, width=0.05, center=None, offsets=(0.5, 1.0, 1.5), t_end=None, cfl=0.2):
    """Heat-only Gaussian temperature pulse on a 1D grid with frozen flow.

    Returns ``(times, probe_series, offsets)`` for :func:`second_sound_speed`.
    """
    g = model.grid
    if g.ndim != 1:
        raise ValueError("the pulse probe run is one-dimensional")
    x = g.coordinates()[0]
    x0 = g.origin[0] + 0.25 * g.lengths[0] if center is None else center
    T = T0 * (1.0 + amplitude * np.exp(-0.5 * ((x - x0) / width) ** 2))
    rho = np.full(g.shape, rho0)
    s = model.eq.entropy_for_temperature(rho, T)
    u = np.zeros((1,) + g.shape)
    m = replace(model, frozen_flow=True)
    st = initial_fields(m, rho, s, u)
    probes = {}
    for j, d in enumerate(offsets):
        idx = int(np.argmin(np.abs(x - (x0 + d))))
        probes[f"p{j}"] = ("T", idx)
    actual = [float(x[probes[f"p{j}"][1]] - x0) for j in range(len(offsets))]
    result = run(st, m, StepControl(cfl=cfl, t_end=t_end), probes=probes)
    rec = result.record
    return np.asarray(rec.time), [np.asarray(rec.probes[f"p{j}"]) for j in range(len(offsets))], actual
