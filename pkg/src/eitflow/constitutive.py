"""Relaxation laws for the thermodynamic fluxes and the entropy bookkeeping.

Rates are returned as plain time derivatives ``d/dt`` of the stored fields.
Every law is first written for the Truesdell rate (the objective rate of a
contravariant density) and the transport part is then subtracted.

Conventions: ``T_ref`` is the reference temperature used to turn relaxation
times into flux-energy coefficients, ``alpha = tau1 / (kappa T_ref)`` and
``beta = tau2 / (2 eta)``.  When the solver passes ``alpha`` explicitly, the
heat-flux relaxation time becomes the local ``kappa T alpha``; that keeps the
entropy production an exact sum of squares.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fields import (
    contract_all,
    deviator,
    divergence,
    full_to_sym,
    gradient,
    sym_to_full,
    symmetrize,
    trace,
    truesdell_transport,
)
from .thermo import EquilibriumEOS, NonEqEOS


class Mode(enum.Enum):
    EULER = "EULER"
    CIT = "CIT"
    EIT = "EIT"
    EIT_JS = "EIT_JS"
    EIT_HIGHER = "EIT_HIGHER"

    @property
    def evolves_fluxes(self):
        return self in (Mode.EIT, Mode.EIT_JS, Mode.EIT_HIGHER)


class EntropyFlux(enum.Enum):
    CLASSICAL = "CLASSICAL"
    GENERAL = "GENERAL"
    CHAIN = "CHAIN"


class ClosureError(ValueError):
    """Inconsistent phenomenological coefficients."""


@dataclass(frozen=True)
class ClosureSpec:
    """Phenomenological coefficients and model selector.

    ``chain_kappa[i]`` and ``chain_tau[i]`` belong to the flux of order
    ``k = i + 2``.  ``coupling_tensor`` is accepted for completeness but only
    its isotropic reduction (``gamma1``, ``gamma2``) enters the dynamics.
    """

    mode: Mode = Mode.EIT
    kappa: float = 0.0
    eta: float = 0.0
    zeta: float = 0.0
    tau1: float = 0.0
    tau2: float = 0.0
    tau0: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    order: int = 1
    chain_kappa: tuple = ()
    chain_tau: tuple = ()
    t_ref: float = 1.0
    coupling_tensor: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "chain_kappa", tuple(float(x) for x in self.chain_kappa))
        object.__setattr__(self, "chain_tau", tuple(float(x) for x in self.chain_tau))

    @property
    def entropy_flux(self):
        return {
            Mode.EIT_JS: EntropyFlux.GENERAL,
            Mode.EIT_HIGHER: EntropyFlux.CHAIN,
        }.get(self.mode, EntropyFlux.CLASSICAL)

    @property
    def heat_active(self):
        return self.kappa > 0

    @property
    def shear_active(self):
        return self.eta > 0

    @property
    def bulk_active(self):
        return self.zeta > 0

    def validate(self, ndim):
        """Raise :class:`ClosureError` naming the first violated invariant."""
        for name in ("kappa", "eta", "zeta", "tau1", "tau2", "tau0", "t_ref"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ClosureError(f"{name} must be a finite nonnegative number, got {value}")
        if self.t_ref <= 0:
            raise ClosureError("t_ref must be positive")
        mode = self.mode
        if mode is Mode.EULER and (self.kappa or self.eta or self.zeta):
            raise ClosureError("EULER mode requires kappa = eta = zeta = 0")
        if mode in (Mode.EULER, Mode.CIT) and (self.tau1 or self.tau2 or self.tau0):
            raise ClosureError(f"{mode.value} mode requires all relaxation times to be 0")
        if mode is not Mode.EIT_JS and (self.gamma1 or self.gamma2):
            raise ClosureError("gamma1/gamma2 couplings require mode EIT_JS")
        if mode.evolves_fluxes:
            if self.heat_active and self.tau1 <= 0:
                raise ClosureError("tau1 = 0 with kappa > 0 is degenerate in EIT modes; use CIT")
            if self.shear_active and self.tau2 <= 0:
                raise ClosureError("tau2 = 0 with eta > 0 is degenerate in EIT modes; use CIT")
            if self.bulk_active and self.tau0 <= 0:
                raise ClosureError("tau0 = 0 with zeta > 0 is degenerate in EIT modes; use CIT")
            for tau, coeff in (("tau1", "kappa"), ("tau2", "eta"), ("tau0", "zeta")):
                if getattr(self, tau) > 0 and getattr(self, coeff) == 0:
                    raise ClosureError(f"{tau} > 0 with {coeff} = 0 makes the flux energy coefficient infinite")
            if self.shear_active and self.bulk_active:
                beta_shear = self.tau2 / (2.0 * self.eta)
                beta_bulk = self.tau0 / (ndim * self.zeta)
                if not np.isclose(beta_shear, beta_bulk, rtol=1e-12, atol=0.0):
                    raise ClosureError(
                        f"tau0 must equal d*zeta*tau2/(2*eta) = {ndim * self.zeta * self.tau2 / (2 * self.eta)!r}"
                        " so that a single beta serves both stress parts"
                    )
            if mode is Mode.EIT_JS and (self.gamma1 or self.gamma2) and not (self.heat_active and (self.shear_active or self.bulk_active)):
                raise ClosureError("EIT_JS couplings need both heat conduction and viscosity active")
        if mode is Mode.EIT_HIGHER:
            if self.order < 1:
                raise ClosureError("flux order n must be at least 1")
            if not self.heat_active:
                raise ClosureError("EIT_HIGHER needs kappa > 0")
            if len(self.chain_kappa) != self.order - 1 or len(self.chain_tau) != self.order - 1:
                raise ClosureError(f"order {self.order} needs {self.order - 1} chain_kappa and chain_tau entries")
            if any(x <= 0 for x in self.chain_kappa + self.chain_tau):
                raise ClosureError("chain_kappa and chain_tau must be positive")
        elif self.order != 1:
            raise ClosureError("order > 1 requires mode EIT_HIGHER")
        return self

    # derived coefficients -------------------------------------------------

    @property
    def alpha(self):
        """Heat-flux energy coefficient ``tau1 / (kappa T_ref)``."""
        return self.tau1 / (self.kappa * self.t_ref) if self.heat_active and self.mode.evolves_fluxes else 0.0

    def beta(self, ndim):
        """Stress energy coefficient ``tau2/(2 eta)`` (or ``tau0/(d zeta)``)."""
        if not self.mode.evolves_fluxes:
            return 0.0
        if self.shear_active:
            return self.tau2 / (2.0 * self.eta)
        if self.bulk_active:
            return self.tau0 / (ndim * self.zeta)
        return 0.0

    def chain_conductances(self):
        """Reference flux-force coefficients ``L^k(T_ref)``, k = 1..n."""
        L = [self.kappa * self.t_ref]
        taus = (self.tau1,) + self.chain_tau
        for i, kk in enumerate(self.chain_kappa):
            L.append(L[-1] * kk / taus[i])
        return L

    def chain_alphas(self):
        """``alpha_k = tau_k / L^k(T_ref)`` for k = 1..n."""
        taus = (self.tau1,) + self.chain_tau
        return [t / L for t, L in zip(taus, self.chain_conductances())]

    def flux_energy_eos(self, eq=None, ndim=1):
        """Nonequilibrium EOS whose coefficients match these relaxation times."""
        eq = EquilibriumEOS() if eq is None else eq
        higher = tuple(self.chain_alphas()[1:]) if self.mode is Mode.EIT_HIGHER else ()
        return NonEqEOS(eq=eq, alpha=self.alpha, beta=self.beta(ndim), higher_alpha=higher)

    def max_relaxation_rate(self, T_min=None):
        """Largest ``1/tau`` that the explicit stepper must resolve."""
        taus = []
        if self.mode.evolves_fluxes:
            if self.heat_active:
                scale = 1.0 if T_min is None else min(1.0, T_min / self.t_ref)
                taus.append(self.tau1 * scale)
            if self.shear_active:
                taus.append(self.tau2)
            if self.bulk_active:
                taus.append(self.tau0)
            if self.mode is Mode.EIT_HIGHER:
                taus.extend(self.chain_tau)
        return max((1.0 / t for t in taus if t > 0), default=0.0)


# --- classical closures -------------------------------------------------------


def fourier_flux(grad_T, closure):
    """``q = -kappa grad T``."""
    return -closure.kappa * grad_T


def newton_stokes(grad_u, closure):
    """``sigma = 2 eta (Def u)^0 + zeta div u delta`` as a full tensor."""
    ndim = grad_u.shape[0]
    D = 0.5 * (grad_u + np.swapaxes(grad_u, 0, 1))
    div_u = trace(grad_u)
    out = 2.0 * closure.eta * deviator(D, ndim)
    for a in range(ndim):
        out[a, a] = out[a, a] + closure.zeta * div_u
    return out


# --- coupling forces for the general entropy flux --------------------------------


@dataclass
class CouplingForces:
    """Spatial derivatives entering the isotropic ``gamma1, gamma2`` couplings."""

    temperature: np.ndarray
    grad_pv: np.ndarray
    div_dev: np.ndarray
    div_q: np.ndarray
    sym_grad_q_dev: np.ndarray


def coupling_forces(q, sigma_full, T, grid, padded=False):
    ndim = grid.ndim
    pv = trace(sigma_full) / ndim
    dev = deviator(sigma_full, ndim)
    gq = gradient(q, grid, padded)
    sym_gq = 0.5 * (gq + np.swapaxes(gq, 0, 1))
    return CouplingForces(
        temperature=grid.interior(T) if padded else T,
        grad_pv=gradient(pv, grid, padded),
        div_dev=divergence(dev, grid, padded),
        div_q=trace(gq),
        sym_grad_q_dev=deviator(sym_gq, ndim),
    )


# --- relaxation laws ------------------------------------------------------------


def heat_relaxation_time(T, closure, alpha=None):
    """Constant ``tau1``, or the local ``kappa T alpha`` when ``alpha`` is given."""
    if alpha is None:
        return closure.tau1
    return closure.kappa * T * alpha


def cattaneo_christov_rhs(
    q, T, u, grid, closure, alpha=None, padded=False, grad_u=None, grad_T=None, coupling=None, return_rate=False
):
    """Time derivative of the heat flux under ``tau1 D_t q + q = -kappa grad T``.

    ``D_t`` is the Truesdell rate.  With ``coupling`` (EIT_JS) the force gains
    ``kappa T^2 (gamma1 grad p_v + gamma2 div sigma^0)``.  With
    ``return_rate`` the Truesdell rate is returned as well.
    """
    if closure.mode.evolves_fluxes and closure.tau1 <= 0:
        raise ValueError("degenerate relaxation: tau1 = 0 in an EIT mode (use CIT)")
    gT = gradient(T, grid, padded) if grad_T is None else grad_T
    Ti = grid.interior(T) if padded else T
    qi = grid.interior(q) if padded else q
    tau = heat_relaxation_time(Ti, closure, alpha)
    force = -closure.kappa * gT
    if coupling is not None:
        force = force + closure.kappa * coupling.temperature**2 * (closure.gamma1 * coupling.grad_pv + closure.gamma2 * coupling.div_dev)
    rate = (force - qi) / tau
    dq_dt = rate - truesdell_transport(u, q, grid, 1, padded, grad_u)
    return (dq_dt, rate) if return_rate else dq_dt


def maxwell_truesdell_rhs(
    sigma, u, grid, closure, decomposed=True, padded=False, grad_u=None, coupling=None, return_rate=False
):
    """Time derivative of the packed viscous stress under the Maxwell law.

    The deviatoric and volumetric parts relax separately,

        tau2 (D_t sigma)^0 + sigma^0 = 2 eta (Def u)^0
        tau0 tr(D_t sigma)/d + p_v = zeta div u,

    written out with the scalar material derivative of ``p_v``.  With
    ``decomposed=False`` the undecomposed upper-convected law
    ``tau2 D_t sigma + sigma = 2 eta Def u`` is used (valid only when
    ``zeta = 2 eta/d`` and ``tau0 = tau2``).
    """
    ndim = grid.ndim
    full = sym_to_full(sigma, ndim)
    gu = gradient(u, grid, padded) if grad_u is None else grad_u
    full_i = grid.interior(full) if padded else full
    ui = grid.interior(u) if padded else u
    D = 0.5 * (gu + np.swapaxes(gu, 0, 1))
    div_u = trace(gu)
    if not decomposed:
        if closure.tau2 <= 0:
            raise ValueError("degenerate relaxation: tau2 = 0")
        rate = (2.0 * closure.eta * D - full_i) / closure.tau2
        dsig = rate - truesdell_transport(u, full, grid, 2, padded, gu)
        out = full_to_sym(dsig, ndim)
        return (out, full_to_sym(rate, ndim)) if return_rate else out

    D0 = deviator(D, ndim)
    pv = trace(full) / ndim
    dev = full - _iso(pv, ndim)
    dev_i = grid.interior(dev) if padded else dev
    pv_i = grid.interior(pv) if padded else pv
    work = contract_all(dev_i, D0, 2)
    eye = np.eye(ndim).reshape((ndim, ndim) + (1,) * ndim)

    if closure.shear_active:
        if closure.tau2 <= 0:
            raise ValueError("degenerate relaxation: tau2 = 0 in an EIT mode (use CIT)")
        target = D0
        if coupling is not None:
            target = D0 + coupling.temperature * closure.gamma2 * coupling.sym_grad_q_dev
        dev_rate = (2.0 * closure.eta * target - dev_i) / closure.tau2
        d_dev = (
            dev_rate
            - (2.0 / ndim) * work * eye
            + 2.0 * pv_i * D0
            - truesdell_transport(u, dev, grid, 2, padded, gu)
        )
    else:
        # no shear viscosity: the deviator is slaved to zero
        dev_rate = -2.0 * pv_i * D0
        d_dev = np.zeros_like(dev_i)

    if closure.bulk_active:
        if closure.tau0 <= 0:
            raise ValueError("degenerate relaxation: tau0 = 0 in an EIT mode (use CIT)")
        drive = div_u
        if coupling is not None:
            drive = div_u + coupling.temperature * closure.gamma1 * coupling.div_q
        vol_rate = (closure.zeta * drive - pv_i) / closure.tau0
        advect = np.sum(ui * gradient(pv, grid, padded), axis=0)
        d_pv = vol_rate - advect - ((ndim - 2.0) / ndim) * pv_i * div_u + (2.0 / ndim) * work
    else:
        # no bulk viscosity: p_v is slaved to zero
        vol_rate = -(2.0 / ndim) * work
        d_pv = np.zeros_like(pv_i)

    dsig = d_dev + _iso(d_pv, ndim)
    out = full_to_sym(dsig, ndim)
    if return_rate:
        return out, full_to_sym(dev_rate + _iso(vol_rate, ndim), ndim)
    return out


def _iso(scalar, ndim):
    eye = np.eye(ndim).reshape((ndim, ndim) + (1,) * np.ndim(scalar))
    return eye * scalar


def higher_order_rhs(chain, T, u, grid, closure, t_ref=None, padded=False, grad_u=None, grad_T=None, return_rate=False):
    """Rates of the flux hierarchy ``q^(1) .. q^(n)``.

        tau_k (D_t q^(k) + div q^(k+1)) + q^(k) = -kappa_k sym grad q^(k-1)

    with ``q^(0) = T`` and no ``q^(n+1)``.  ``chain[0]`` is the heat-flux
    vector, ``chain[k-1]`` a full symmetric rank-k array.  With ``t_ref`` the
    coefficients follow the thermodynamically consistent local scaling
    (``theta = T/t_ref``): ``tau_k -> tau_k theta``, the divergence term picks
    up ``theta`` and the gradient drive for ``k >= 2`` picks up ``theta^2``;
    at ``T = t_ref`` this is the constant-coefficient hierarchy.
    """
    n = len(chain)
    if n < 1:
        raise ValueError("the flux hierarchy needs at least one member")
    if len(closure.chain_kappa) < n - 1 or len(closure.chain_tau) < n - 1:
        raise ValueError(f"closure provides coefficients for fewer than {n} flux orders")
    kappas = (closure.kappa,) + closure.chain_kappa
    taus = (closure.tau1,) + closure.chain_tau
    gT = gradient(T, grid, padded) if grad_T is None else grad_T
    Ti = grid.interior(T) if padded else T
    theta = 1.0 if t_ref is None else Ti / t_ref
    gu = gradient(u, grid, padded) if grad_u is None else grad_u
    inner = [grid.interior(Q) if padded else Q for Q in chain]
    rates, dts = [], []
    for k in range(1, n + 1):
        Q = chain[k - 1]
        if k == 1:
            drive = -kappas[0] * gT
        else:
            g = gradient(chain[k - 2], grid, padded)
            drive = -kappas[k - 1] * theta**2 * symmetrize(g, k)
        tau = taus[k - 1] * theta
        rate = (drive - inner[k - 1]) / tau
        if k < n:
            rate = rate - theta * divergence(chain[k], grid, padded)
        rates.append(rate)
        dts.append(rate - truesdell_transport(u, Q, grid, k, padded, gu))
    return (dts, rates) if return_rate else dts


# --- entropy flux and production ---------------------------------------------------


def entropy_flux(q, T, closure, sigma_full=None, chain=(), ndim=None):
    """Return ``(j_s, j_extra)`` with ``j_s = q/T + j_extra``.

    ``chain`` lists the fluxes of order 2..n (full storage).
    """
    j = q / T
    extra = np.zeros_like(q)
    kind = closure.entropy_flux
    if kind is EntropyFlux.GENERAL and sigma_full is not None:
        d = q.shape[0] if ndim is None else ndim
        pv = trace(sigma_full) / d
        dev = deviator(sigma_full, d)
        extra = closure.gamma1 * pv * q + closure.gamma2 * np.einsum("ab...,b...->a...", dev, q)
    elif kind is EntropyFlux.CHAIN and chain:
        gammas = chain_gammas(closure)
        members = (q,) + tuple(chain)
        for k in range(1, len(members)):
            upper, lower = members[k], members[k - 1]
            letters = "ijklmn"[: lower.ndim - T.ndim]
            contracted = np.einsum(f"a{letters}...,{letters}...->a...", upper, lower)
            extra = extra + gammas[k - 1] * contracted
    return j + extra, extra


def chain_gammas(closure):
    """``gamma_k = -alpha_k / T_ref`` for k = 1..n-1."""
    return [-a / closure.t_ref for a in closure.chain_alphas()[:-1]]


def entropy_production(T, grad_u, grad_T, q=None, sigma_full=None, dq=None, dsigma=None, rate_q=None, rate_sigma=None, extra=0.0):
    """Pointwise rate of internal entropy production.

        (1/T) (sigma:grad u - (q/T).grad T - dsigma:D_t sigma - dq.D_t q) + extra

    ``dq``, ``dsigma`` are the energy conjugates and ``rate_*`` the Truesdell
    rates; ``extra`` carries the divergence of the non-classical entropy flux
    and any higher-order flux terms.
    """
    acc = 0.0
    if sigma_full is not None:
        acc = acc + contract_all(sigma_full, grad_u, 2)
        if dsigma is not None and rate_sigma is not None:
            acc = acc - contract_all(dsigma, rate_sigma, 2)
    if q is not None:
        acc = acc - np.sum((q / T) * grad_T, axis=0)
        if dq is not None and rate_q is not None:
            acc = acc - np.sum(dq * rate_q, axis=0)
    return acc / T + extra


def production_quadratic_form(T, q=None, sigma_full=None, closure=None, ndim=1, chain=()):
    """Closed-form production for the consistent linear closures.

    ``|q|^2/(kappa T^2) + (|sigma^0|^2/(2 eta) + p_v^2/zeta)/T`` plus
    ``|q^(k)|^2/(L^k T)`` for the hierarchy.
    """
    out = np.zeros_like(T)
    if q is not None and closure.kappa > 0:
        out = out + np.sum(q * q, axis=0) / (closure.kappa * T**2)
    if sigma_full is not None:
        pv = trace(sigma_full) / ndim
        dev = deviator(sigma_full, ndim)
        if closure.eta > 0:
            out = out + contract_all(dev, dev, 2) / (2.0 * closure.eta * T)
        if closure.zeta > 0:
            out = out + pv**2 / (closure.zeta * T)
    if chain:
        Ls = closure.chain_conductances()
        for i, Qk in enumerate(chain):
            rank = Qk.ndim - T.ndim
            L = Ls[i + 1] * T / closure.t_ref
            out = out + contract_all(Qk, Qk, rank) / (L * T)
    return out
