"""Time integration of the Eulerian fluid system with relaxing fluxes.

The evolved set is ``(rho, s, u, sigma, q, q^(k))`` together with the two
bookkeeping densities ``gamma`` (thermal displacement) and ``varsigma``
(accumulated internal entropy production), which never feed back.

Balance laws, in the standard form with ``eps_hat`` the nonequilibrium
internal energy, ``p = rho eps_rho + s T - eps_hat`` and ``j = q/T``::

    d_t rho + div(rho u) = 0
    rho (d_t u + u.grad u) = -grad p + div(sigma + tau_q + tau_sigma)
    T (d_t s + div(s u) + div j) = sigma:grad u - j.grad T
                                   - dsigma:D_t sigma - dq.D_t q

with the nonequilibrium stresses ``tau_q = -(dq.q) I + q (x) dq`` and
``tau_sigma = -(dsigma:sigma) I + 2 sigma.dsigma``.  Form ``B`` of the
momentum balance uses the modified pressure ``p_hat`` in its expanded
(chain-rule) arrangement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import constitutive as cons
from .constitutive import ClosureSpec, Mode
from .fields import (
    Grid,
    contract_all,
    contract_tail,
    deviator,
    divergence,
    full_to_sym,
    gradient,
    sym_to_full,
    symmetrize,
    trace,
)
from .thermo import AdmissibilityError, EquilibriumEOS


class BlowUpError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None, record=None):
        super().__init__(message)
        self.step = step
        self.record = record


@dataclass
class FieldSet:
    """Eulerian state on the interior cells of a grid.

    ``sigma`` is packed symmetric storage; ``chain`` holds the fluxes of
    order 2..n in full storage.  Fluxes that the mode does not evolve are
    ``None``.
    """

    rho: np.ndarray
    s: np.ndarray
    u: np.ndarray
    sigma: np.ndarray | None = None
    q: np.ndarray | None = None
    chain: tuple = ()
    gamma: np.ndarray | None = None
    varsigma: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = np.zeros_like(self.rho)
        if self.varsigma is None:
            self.varsigma = np.zeros_like(self.rho)
        self.chain = tuple(self.chain)

    def arrays(self):
        out = [self.rho, self.s, self.u]
        if self.sigma is not None:
            out.append(self.sigma)
        if self.q is not None:
            out.append(self.q)
        out.extend(self.chain)
        out.extend([self.gamma, self.varsigma])
        return out

    def flatten(self):
        return np.concatenate([np.ravel(a) for a in self.arrays()])

    def unflatten(self, vector, t=None):
        pieces, start = [], 0
        for a in self.arrays():
            pieces.append(vector[start : start + a.size].reshape(a.shape))
            start += a.size
        it = iter(pieces)
        rho, s, u = next(it), next(it), next(it)
        sigma = next(it) if self.sigma is not None else None
        q = next(it) if self.q is not None else None
        chain = tuple(next(it) for _ in self.chain)
        gamma, varsigma = next(it), next(it)
        return FieldSet(rho, s, u, sigma, q, chain, gamma, varsigma, self.t if t is None else t)

    def copy(self):
        return self.unflatten(self.flatten().copy())


@dataclass(frozen=True)
class BoundaryPolicy:
    """Ghost-cell rules on wall axes.

    ``velocity`` is ``"noslip"`` (all components odd) or ``"slip"`` (normal
    component odd).  Scalars are even.  Heat flux and the higher chain
    members are reflected as tensors, so the normal heat flux, and with it
    the normal entropy flux, vanishes on the wall face.  The viscous stress
    is even behind a no-slip wall, which keeps the wall shear that the odd
    tangential velocity drives; behind a slip wall it is reflected, so the
    wall shear vanishes.
    """

    velocity: str = "noslip"

    def __post_init__(self):
        if self.velocity not in ("noslip", "slip"):
            raise ValueError(f"unknown wall velocity condition {self.velocity!r}")

    @property
    def velocity_parity(self):
        return "odd" if self.velocity == "noslip" else "mirror"

    @property
    def stress_parity(self):
        return "even" if self.velocity == "noslip" else "mirror"

    def pad_state(self, state, grid):
        if grid.all_periodic:
            return state
        return FieldSet(
            rho=grid.pad(state.rho),
            s=grid.pad(state.s),
            u=grid.pad(state.u, self.velocity_parity, rank=1),
            sigma=None if state.sigma is None else grid.pad(state.sigma, self.stress_parity, packed=True),
            q=None if state.q is None else grid.pad(state.q, "mirror", rank=1),
            chain=tuple(grid.pad(Q, "mirror", rank=Q.ndim - grid.ndim) for Q in state.chain),
            gamma=grid.pad(state.gamma),
            varsigma=grid.pad(state.varsigma),
            t=state.t,
        )


@dataclass(frozen=True)
class Model:
    """Everything the right-hand side needs besides the state.

    ``nonequilibrium_stresses=False`` deletes ``tau_q, tau_sigma`` from the
    momentum balance while keeping the objective rates (an energy-leak
    control).  ``flux_dependence=False`` in an EIT mode drops the flux
    energies and slaves the fluxes to their instantaneous flux-force values.
    """

    grid: Grid
    closure: ClosureSpec
    eq: EquilibriumEOS = field(default_factory=EquilibriumEOS)
    boundary: BoundaryPolicy = field(default_factory=BoundaryPolicy)
    form: str = "A"
    frozen_flow: bool = False
    nonequilibrium_stresses: bool = True
    flux_dependence: bool = True
    hyperdiffusion: float = 0.0

    def __post_init__(self):
        if self.form not in ("A", "B"):
            raise ValueError(f"momentum form must be 'A' or 'B', got {self.form!r}")
        self.closure.validate(self.grid.ndim)

    @cached_property
    def eos(self):
        if not self.flux_dependence:
            return replace(self.closure, mode=Mode.CIT, tau1=0.0, tau2=0.0, tau0=0.0).flux_energy_eos(self.eq, self.grid.ndim)
        return self.closure.flux_energy_eos(self.eq, self.grid.ndim)

    @property
    def evolves_fluxes(self):
        return self.closure.mode.evolves_fluxes and self.flux_dependence

    @property
    def carries_q(self):
        return self.evolves_fluxes and self.closure.heat_active

    @property
    def carries_sigma(self):
        return self.evolves_fluxes and (self.closure.shear_active or self.closure.bulk_active)

    @property
    def chain_order(self):
        return self.closure.order if self.closure.mode is Mode.EIT_HIGHER and self.flux_dependence else 1


@dataclass
class RhsResult:
    rates: FieldSet
    production: np.ndarray
    temperature: np.ndarray
    energy_density: np.ndarray
    energy_flux: np.ndarray | None = None
    energy_rate: np.ndarray | None = None
    force: np.ndarray | None = None


def initial_fields(model, rho, s, u, sigma=None, q=None, chain=None):
    """Build a :class:`FieldSet` with the flux slots the model evolves."""
    g = model.grid
    rho = np.asarray(rho, dtype=float)
    ncomp = 1 if g.ndim == 1 else 3
    if model.carries_sigma:
        sigma = np.zeros((ncomp,) + g.shape) if sigma is None else np.asarray(sigma, dtype=float)
    else:
        sigma = None
    if model.carries_q:
        q = np.zeros((g.ndim,) + g.shape) if q is None else np.asarray(q, dtype=float)
    else:
        q = None
    members = ()
    if model.chain_order > 1:
        if chain is None:
            members = tuple(np.zeros((g.ndim,) * k + g.shape) for k in range(2, model.chain_order + 1))
        else:
            members = tuple(np.asarray(Q, dtype=float) for Q in chain)
    return FieldSet(rho, np.asarray(s, dtype=float), np.asarray(u, dtype=float), sigma, q, members)


def _check_admissible(rho, T, grid):
    bad = ~(rho > 0)
    if np.any(bad):
        raise AdmissibilityError(f"nonpositive density at cell {tuple(int(i) for i in np.argwhere(bad)[0])}")
    bad = ~(T > 0)
    if np.any(bad):
        raise AdmissibilityError(f"nonpositive temperature at cell {tuple(int(i) for i in np.argwhere(bad)[0])}")


def _stress_pair(conjugate, flux, rank, grid):
    """``(tau, tau_prime)`` for a flux of the given rank and its conjugate.

    ``tau_prime^{ab} = rank * flux^{a..} conjugate^{b..}`` and
    ``tau = tau_prime - (conjugate : flux) I``.
    """
    prime = rank * contract_tail(flux, conjugate, rank)
    work = contract_all(conjugate, flux, rank)
    tau = prime.copy()
    for a in range(grid.ndim):
        tau[a, a] = tau[a, a] - work
    return tau, prime


def _hyper(f, grid, nu, parity="even", rank=0, packed=False):
    """``-nu * (discrete Laplacian)^2`` with compact three-point stencils."""

    def lap(g):
        lead = g.ndim - grid.ndim
        out = np.zeros_like(g)
        for ax in range(grid.ndim):
            h2 = grid.spacing[ax] ** 2
            if ax in grid.wall_axes:
                gp = grid.pad(g, parity, rank=lead if not packed else None, packed=packed)
                gp = _only_axis(gp, grid, lead, ax)
                lo = np.take(gp, range(0, gp.shape[lead + ax] - 2), axis=lead + ax)
                mid = np.take(gp, range(1, gp.shape[lead + ax] - 1), axis=lead + ax)
                hi = np.take(gp, range(2, gp.shape[lead + ax]), axis=lead + ax)
                out = out + (lo - 2 * mid + hi) / h2
            else:
                out = out + (np.roll(g, 1, lead + ax) - 2 * g + np.roll(g, -1, lead + ax)) / h2
        return out

    return -nu * lap(lap(f))


def _only_axis(gp, grid, lead, keep):
    index = [slice(None)] * gp.ndim
    for ax in grid.wall_axes:
        if ax != keep:
            index[lead + ax] = slice(1, -1)
    return gp[tuple(index)]


def evaluate_rhs(state, model, energy_terms=False):
    """Assemble all time derivatives and the pointwise entropy production."""
    g = model.grid
    cl = model.closure
    nd = g.ndim
    P = model.boundary.pad_state(state, g)
    I = g.interior
    rho_i, s_i, u_i = state.rho, state.s, state.u
    mode = cl.mode
    evolved = model.evolves_fluxes

    grad_u = gradient(P.u, g, padded=True)

    sigma_full_p = None if P.sigma is None else sym_to_full(P.sigma, nd)
    chain_p = P.chain
    ev_pre = model.eos.evaluate(P.rho, P.s, None, None, check=False)
    T_p = ev_pre.temperature
    _check_admissible(rho_i, I(T_p), g)
    grad_T = gradient(T_p, g, padded=True)
    T_i = I(T_p)

    # fluxes --------------------------------------------------------------
    dq_dt = dsig_dt = None
    chain_dt = ()
    rate_q = rate_sigma = None
    chain_rates = ()
    extra_cons = None
    extra_prod = 0.0
    q_p = sig_p = None
    if evolved:
        q_p = P.q
        sig_p = sigma_full_p
        coupling = None
        if mode is Mode.EIT_JS and q_p is not None and sig_p is not None:
            coupling = cons.coupling_forces(q_p, sig_p, T_p, g, padded=True)
        if q_p is not None:
            if mode is Mode.EIT_HIGHER:
                members = (q_p,) + tuple(chain_p)
                dts, rates = cons.higher_order_rhs(
                    members, T_p, P.u, g, cl, t_ref=cl.t_ref, padded=True, grad_u=grad_u, grad_T=grad_T, return_rate=True
                )
                dq_dt, rate_q = dts[0], rates[0]
                chain_dt, chain_rates = tuple(dts[1:]), tuple(rates[1:])
            else:
                dq_dt, rate_q = cons.cattaneo_christov_rhs(
                    q_p, T_p, P.u, g, cl, alpha=model.eos.alpha, padded=True, grad_u=grad_u, grad_T=grad_T,
                    coupling=coupling, return_rate=True,
                )
        if P.sigma is not None:
            dsig_dt, rate_packed = cons.maxwell_truesdell_rhs(
                P.sigma, P.u, g, cl, padded=True, grad_u=grad_u, coupling=coupling, return_rate=True
            )
            rate_sigma = sym_to_full(rate_packed, nd)
    elif mode is not Mode.EULER:
        # instantaneous flux-force relations
        q_i = cons.fourier_flux(grad_T, cl)
        sig_i = cons.newton_stokes(grad_u, cl)
        q_p = g.pad(q_i, "mirror", rank=1)
        sig_p = g.pad(sig_i, model.boundary.stress_parity, rank=2)

    ev = model.eos.evaluate(P.rho, P.s, sig_p, q_p, chain_p if evolved else (), check=False)
    q_i = None if q_p is None else I(q_p)
    sig_i = None if sig_p is None else I(sig_p)

    # entropy ------------------------------------------------------------------
    j_p = None if q_p is None else q_p / T_p
    production_T = cons.entropy_production(
        T_i, grad_u, grad_T, q_i, sig_i,
        None if ev.dq is None else I(ev.dq),
        None if ev.dsigma is None else I(ev.dsigma),
        rate_q, rate_sigma,
    )
    for dk, rk in zip(ev.dchain, chain_rates):
        rank = rk.ndim - nd
        production_T = production_T - contract_all(I(dk), rk, rank) / T_i

    if evolved and mode is Mode.EIT_JS and q_p is not None and sig_p is not None:
        _, extra_p = cons.entropy_flux(q_p, T_p, cl, sig_p, ndim=nd)
        extra_cons = divergence(extra_p, g, padded=True)
        pv_i = trace(sig_i) / nd
        dev_i = deviator(sig_i, nd)
        extra_prod = (
            cl.gamma1 * (np.sum(q_i * coupling.grad_pv, axis=0) + pv_i * coupling.div_q)
            + cl.gamma2 * (np.sum(q_i * coupling.div_dev, axis=0) + contract_all(dev_i, coupling.sym_grad_q_dev, 2))
        )
    elif evolved and model.chain_order > 1:
        members = (q_p,) + tuple(chain_p)
        _, extra_p = cons.entropy_flux(q_p, T_p, cl, chain=tuple(chain_p))
        extra_cons = divergence(extra_p, g, padded=True)
        gammas = cons.chain_gammas(cl)
        extra_prod = 0.0
        for k in range(1, len(members)):
            lower, upper = members[k - 1], members[k]
            rk = k
            div_upper = divergence(upper, g, padded=True)
            sym_grad_lower = symmetrize(gradient(lower, g, padded=True), rk + 1)
            extra_prod = extra_prod + gammas[k - 1] * (
                contract_all(div_upper, I(lower), rk) + contract_all(I(upper), sym_grad_lower, rk + 1)
            )

    production = production_T + extra_prod
    ds_dt = -divergence(P.s * P.u, g, padded=True)
    if j_p is not None:
        if extra_cons is not None:
            ds_dt = ds_dt - divergence(j_p + extra_p, g, padded=True) + production_T + extra_cons
        else:
            ds_dt = ds_dt - divergence(j_p, g, padded=True) + production_T
    elif sig_p is not None:
        ds_dt = ds_dt + production_T

    # momentum -------------------------------------------------------------
    stress = None
    if sig_p is not None:
        stress = sig_p
    taus, primes = [], []
    if ev.dq is not None:
        taus_q = _stress_pair(ev.dq, q_p, 1, g)
        taus.append(taus_q[0])
        primes.append(taus_q[1])
    if ev.dsigma is not None:
        taus_s = _stress_pair(ev.dsigma, sig_p, 2, g)
        taus.append(taus_s[0])
        primes.append(taus_s[1])
    for k, (dk, Qk) in enumerate(zip(ev.dchain, chain_p), start=2):
        pair = _stress_pair(dk, Qk, k, g)
        taus.append(pair[0])
        primes.append(pair[1])
    if not model.nonequilibrium_stresses:
        taus, primes = [], []

    if model.form == "A":
        total = stress
        for t in taus:
            total = t if total is None else total + t
        force = -gradient(ev.pressure, g, padded=True)
        if total is not None:
            force = force + divergence(total, g, padded=True)
    else:
        total = stress
        for t in primes:
            total = t if total is None else total + t
        force = -rho_i * gradient(ev.eps_rho, g, padded=True) - s_i * gradient(ev.temperature, g, padded=True)
        if ev.dq is not None and model.nonequilibrium_stresses:
            force = force - np.einsum("a...,ac...->c...", q_i, gradient(ev.dq, g, padded=True))
        if ev.dsigma is not None and model.nonequilibrium_stresses:
            force = force - np.einsum("ab...,abc...->c...", sig_i, gradient(ev.dsigma, g, padded=True))
        if model.nonequilibrium_stresses:
            for k, (dk, Qk) in enumerate(zip(ev.dchain, chain_p), start=2):
                letters = "abcdef"[:k]
                force = force - np.einsum(f"{letters}...,{letters}z...->z...", I(Qk), gradient(dk, g, padded=True))
        if total is not None:
            force = force + divergence(total, g, padded=True)

    if model.frozen_flow:
        drho_dt = np.zeros_like(rho_i)
        du_dt = np.zeros_like(u_i)
    else:
        drho_dt = -divergence(P.rho * P.u, g, padded=True)
        du_dt = force / rho_i - np.einsum("ac...,c...->a...", grad_u, u_i)

    # bookkeeping densities --------------------------------------------------
    dgamma_dt = T_i - np.sum(u_i * gradient(P.gamma, g, padded=True), axis=0)
    dvarsigma_dt = production - divergence(P.varsigma * P.u, g, padded=True)

    if model.hyperdiffusion > 0.0:
        nu = model.hyperdiffusion
        drho_dt = drho_dt + _hyper(rho_i, g, nu)
        ds_dt = ds_dt + _hyper(s_i, g, nu)
        du_dt = du_dt + _hyper(u_i, g, nu, model.boundary.velocity_parity, rank=1)
        if dsig_dt is not None:
            dsig_dt = dsig_dt + _hyper(state.sigma, g, nu, model.boundary.stress_parity, packed=True)
        if dq_dt is not None:
            dq_dt = dq_dt + _hyper(state.q, g, nu, "mirror", rank=1)

    rates = FieldSet(
        rho=drho_dt,
        s=ds_dt,
        u=du_dt,
        sigma=None if state.sigma is None else (full_to_sym(dsig_dt, nd) if dsig_dt.ndim - nd == 2 else dsig_dt),
        q=None if state.q is None else dq_dt,
        chain=chain_dt,
        gamma=dgamma_dt,
        varsigma=dvarsigma_dt,
        t=1.0,
    )
    e_p = 0.5 * P.rho * np.sum(P.u**2, axis=0) + ev.energy
    result = RhsResult(rates, production, T_i, I(e_p), force=force)
    if energy_terms:
        flux = -ev.pressure * P.u
        all_stress = stress
        for t in taus:
            all_stress = t if all_stress is None else all_stress + t
        if all_stress is not None:
            flux = flux + np.einsum("ab...,b...->a...", all_stress, P.u)
        if q_p is not None:
            flux = flux - q_p
        result.energy_flux = flux
        rate = (0.5 * np.sum(u_i**2, axis=0) + I(ev.eps_rho)) * drho_dt + rho_i * np.sum(u_i * du_dt, axis=0)
        rate = rate + T_i * ds_dt
        if state.q is not None:
            rate = rate + np.sum(I(ev.dq) * dq_dt, axis=0)
        if state.sigma is not None:
            dsig_full = sym_to_full(rates.sigma, nd)
            rate = rate + contract_all(I(ev.dsigma), dsig_full, 2)
        for dk, rk in zip(ev.dchain, chain_dt):
            rate = rate + contract_all(I(dk), rk, rk.ndim - nd)
        result.energy_rate = rate
        result.energy_residual = rate + divergence(e_p * P.u, g, padded=True) - divergence(flux, g, padded=True)
    return result


# public single-balance views ------------------------------------------------


def momentum_rhs(state, model, form=None):
    """``rho (d_t u + u.grad u)``, the force density of the momentum balance."""
    m = model if form is None or form == model.form else replace(model, form=form)
    return evaluate_rhs(state, m).force


def entropy_rhs(state, model):
    return evaluate_rhs(state, model).rates.s


def continuity_rhs(state, model):
    g = model.grid
    P = model.boundary.pad_state(state, g)
    return -divergence(P.rho * P.u, g, padded=True)


# step control -------------------------------------------------------------------

SCHEMES = ("RK4", "SSP-RK3")


@dataclass(frozen=True)
class StepControl:
    cfl: float = 0.2
    dt: float | None = None
    t_end: float | None = None
    n_steps: int | None = None
    scheme: str = "RK4"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.t_end is None and self.n_steps is None:
            raise ValueError("StepControl needs t_end or n_steps")
        if self.cfl <= 0:
            raise ValueError("cfl must be positive")


def wave_speed(state, model):
    """Upper bound of the characteristic speeds used by the CFL condition."""
    eq = model.eq
    cl = model.closure
    rho, s = state.rho, state.s
    c = float(np.max(np.sqrt(np.sum(state.u**2, axis=0)) + eq.sound_speed(rho, s)))
    T = eq.temperature(rho, s)
    if model.evolves_fluxes and cl.heat_active:
        tau1 = cl.kappa * T * model.eos.alpha
        c += float(np.sqrt(np.max(cl.kappa * eq.dT_ds(rho, s) / (T * tau1))))
    if model.evolves_fluxes and (cl.shear_active or cl.bulk_active):
        modulus = (2.0 * cl.eta / cl.tau2 if cl.shear_active else 0.0) + (
            model.grid.ndim * cl.zeta / cl.tau0 if cl.bulk_active else 0.0
        )
        c += math.sqrt(modulus / float(np.min(rho)))
    if model.evolves_fluxes and model.chain_order > 1:
        taus = (cl.tau1,) + cl.chain_tau
        kappas = (cl.kappa,) + cl.chain_kappa
        c += math.sqrt(max(k / t for k, t in zip(kappas[1:], taus)))
    return c


def stable_dt(state, model, cfl):
    """``cfl * min(h / c, tau_min / 4, parabolic limit)``."""
    g = model.grid
    h = min(g.spacing)
    bounds = [h / max(wave_speed(state, model), 1e-300)]
    T = model.eq.temperature(state.rho, state.s)
    rate = model.closure.max_relaxation_rate(float(np.min(T))) if model.evolves_fluxes else 0.0
    if rate > 0:
        bounds.append(0.25 / rate)
    cl = model.closure
    if not model.evolves_fluxes and cl.mode is not Mode.EULER:
        chi = float(np.max(cl.kappa * model.eq.dT_ds(state.rho, state.s) / T))
        nu = float(np.max((2.0 * cl.eta + cl.zeta) / state.rho))
        D = max(chi, nu)
        if D > 0:
            bounds.append(4.0 * h * h / (g.ndim * D))
    if model.hyperdiffusion > 0:
        bounds.append(0.5 * h**4 / (model.hyperdiffusion * 16 * g.ndim))
    return cfl * min(bounds)


# integrators ----------------------------------------------------------------------

_RK4_B = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


@dataclass
class StepInfo:
    production_integral: float
    min_production: float


def step(state, model, dt, scheme="RK4"):
    """Advance one step; returns ``(new_state, StepInfo)``."""
    y0 = state.flatten()
    g = model.grid
    prods, mins = [], []

    def f(y, t):
        st = state.unflatten(y, t)
        res = evaluate_rhs(st, model)
        prods.append(g.integrate(res.production))
        mins.append(float(np.min(res.production)))
        return res.rates.flatten()

    t0 = state.t
    if scheme == "RK4":
        k1 = f(y0, t0)
        k2 = f(y0 + 0.5 * dt * k1, t0 + 0.5 * dt)
        k3 = f(y0 + 0.5 * dt * k2, t0 + 0.5 * dt)
        k4 = f(y0 + dt * k3, t0 + dt)
        y1 = y0 + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        weights = _RK4_B
    elif scheme == "SSP-RK3":
        k1 = f(y0, t0)
        y_a = y0 + dt * k1
        k2 = f(y_a, t0 + dt)
        y_b = 0.75 * y0 + 0.25 * (y_a + dt * k2)
        k3 = f(y_b, t0 + 0.5 * dt)
        y1 = y0 / 3.0 + 2.0 / 3.0 * (y_b + dt * k3)
        weights = (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(y1)):
        raise BlowUpError("non-finite values after step")
    new = state.unflatten(y1, t0 + dt)
    info = StepInfo(dt * sum(w * p for w, p in zip(weights, prods)), min(mins))
    return new, info


@dataclass
class RunRecord:
    """Per-step integrated budgets."""

    scenario_hash: str = ""
    time: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    boundary_energy_flux: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    production: list = field(default_factory=list)
    min_production: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    varsigma: list = field(default_factory=list)
    production_integral: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)
    failed: bool = False
    failure: str = ""

    COLUMNS = (
        "time",
        "energy",
        "boundary_energy_flux",
        "entropy",
        "production",
        "min_production",
        "mass",
        "varsigma",
        "production_integral",
    )

    def as_arrays(self):
        return {c: np.asarray(getattr(self, c)) for c in self.COLUMNS}

    def write_csv(self, path):
        with open(path, "w") as fh:
            status = "failed" if self.failed else "ok"
            fh.write(f"# eitflow-record v1 scenario={self.scenario_hash} status={status}\n")
            if self.failed:
                fh.write(f"# failure: {self.failure}\n")
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def boundary_energy_flux(result, model):
    """Outward energy flux through wall faces (face value = ghost/interior mean)."""
    g = model.grid
    if g.all_periodic or result.energy_flux is None:
        return 0.0
    flux = result.energy_flux
    total = 0.0
    for ax in g.wall_axes:
        comp = flux[ax]
        area = g.cell_volume / g.spacing[ax]
        idx = [slice(None)] * comp.ndim
        for other in g.wall_axes:
            if other != ax:
                idx[other] = slice(1, -1)
        c = comp[tuple(idx)]
        lo = 0.5 * (np.take(c, 0, axis=ax) + np.take(c, 1, axis=ax))
        hi = 0.5 * (np.take(c, -1, axis=ax) + np.take(c, -2, axis=ax))
        total += area * (float(np.sum(hi)) - float(np.sum(lo)))
    return total


def _record(rec, state, model, res, prod_integral, min_prod):
    g = model.grid
    rec.time.append(state.t)
    rec.energy.append(g.integrate(res.energy_density))
    rec.boundary_energy_flux.append(boundary_energy_flux(res, model))
    rec.entropy.append(g.integrate(state.s))
    rec.production.append(g.integrate(res.production))
    rec.min_production.append(min_prod)
    rec.mass.append(g.integrate(state.rho))
    rec.varsigma.append(g.integrate(state.varsigma))
    rec.production_integral.append(prod_integral)


@dataclass
class RunResult:
    state: FieldSet
    record: RunRecord
    dt: float
    n_steps: int
    snapshots: list = field(default_factory=list)


def run(state, model, ctrl, record_every=1, probes=None, snapshot_every=None, scenario_hash=""):
    """Integrate with fixed ``dt`` and record budgets.

    ``dt`` is ``ctrl.dt`` if given, else the CFL bound of the initial state;
    with ``t_end`` it is shrunk so that an integer number of steps lands
    exactly on ``t_end``.  ``probes`` maps names to ``(field, flat index)``
    pairs sampled every step.
    """
    dt = ctrl.dt if ctrl.dt is not None else stable_dt(state, model, ctrl.cfl)
    if ctrl.n_steps is not None:
        n = int(ctrl.n_steps)
    else:
        span = ctrl.t_end - state.t
        n = max(1, int(math.ceil(span / dt - 1e-9)))
        dt = span / n
    rec = RunRecord(scenario_hash=scenario_hash)
    probes = probes or {}
    for name in probes:
        rec.probes[name] = []
    snapshots = []

    def sample(st, prod_int, min_prod):
        res = evaluate_rhs(st, model, energy_terms=True)
        _record(rec, st, model, res, prod_int, min_prod)
        for name, (fname, index) in probes.items():
            rec.probes[name].append(_probe_value(st, res, fname, index))
        return res

    sample(state, 0.0, float(np.min(evaluate_rhs(state, model).production)))
    if snapshot_every:
        snapshots.append(state.copy())
    prod_int = 0.0
    min_prod = float("inf")
    current = state
    for i in range(1, n + 1):
        try:
            current, info = step(current, model, dt, ctrl.scheme)
            prod_int += info.production_integral
            min_prod = min(min_prod, info.min_production)
            if i % record_every == 0 or i == n:
                sample(current, prod_int, min_prod)
                min_prod = float("inf")
        except (BlowUpError, AdmissibilityError, FloatingPointError) as exc:
            rec.failed = True
            rec.failure = f"step {i}: {exc}"
            raise BlowUpError(f"run failed at step {i}: {exc}", step=i, record=rec) from exc
        if snapshot_every and (i % snapshot_every == 0 or i == n):
            snapshots.append(current.copy())
    return RunResult(current, rec, dt, n, snapshots)


def _probe_value(state, res, fname, index):
    if fname == "T":
        arr = res.temperature
    elif fname == "q":
        arr = state.q[0]
    else:
        arr = getattr(state, fname)
        if arr.ndim > state.rho.ndim:
            arr = arr[0]
    return float(arr.ravel()[index])


def cit_fluxes(state, model):
    """Instantaneous Fourier and Newton-Stokes fluxes for output."""
    g = model.grid
    P = model.boundary.pad_state(state, g)
    T = model.eq.temperature(P.rho, P.s)
    q = cons.fourier_flux(gradient(T, g, padded=True), model.closure)
    sigma = full_to_sym(cons.newton_stokes(gradient(P.u, g, padded=True), model.closure), g.ndim)
    return q, sigma
