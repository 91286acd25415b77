"""Nonequilibrium equation of state.

The internal energy is ``eps_eq(rho, s)`` plus quadratic flux energies

    eps_hat = eps_eq + alpha/2 |q|^2 + beta/2 sigma:sigma + sum_k alpha_k/2 |q^(k)|^2

Flux arrays are full storage here (``sigma`` is ``(d, d, ...)``), so
``sigma:sigma`` counts each off-diagonal entry twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .fields import sym_pairs, sym_to_full

Coefficient = Union[float, Callable]


class DomainError(ValueError):
    """Nonpositive density handed to the equation of state."""


class AdmissibilityError(ValueError):
    """A state left the admissible set (for example ``T <= 0``)."""


def _first_bad(mask):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if len(idx) else None


@dataclass(frozen=True)
class EquilibriumEOS:
    """Perfect-gas energy ``K rho^gamma exp((s/rho - s_ref)/c_v)``."""

    K: float = 1.0
    gamma_ad: float = 1.4
    c_v: float = 1.0
    s_ref: float = 0.0
    rho_ref: float = 1.0

    def __post_init__(self):
        if self.K <= 0 or self.c_v <= 0 or self.gamma_ad <= 1.0:
            raise ValueError("need K > 0, c_v > 0 and gamma_ad > 1")

    def energy(self, rho, s):
        return self.K * rho**self.gamma_ad * np.exp((s / rho - self.s_ref) / self.c_v)

    def derivatives(self, rho, s):
        """Return ``(eps, d eps/d rho, d eps/d s)``."""
        eps = self.energy(rho, s)
        eps_s = eps / (self.c_v * rho)
        eps_rho = eps * (self.gamma_ad / rho - s / (self.c_v * rho**2))
        return eps, eps_rho, eps_s

    def temperature(self, rho, s):
        return self.energy(rho, s) / (self.c_v * rho)

    def dT_ds(self, rho, s):
        """Slope of temperature in entropy density at fixed density."""
        return self.temperature(rho, s) / (self.c_v * rho)

    def pressure(self, rho, s):
        return (self.gamma_ad - 1.0) * self.energy(rho, s)

    def sound_speed(self, rho, s):
        return np.sqrt(self.gamma_ad * (self.gamma_ad - 1.0) * self.energy(rho, s) / rho)

    def entropy_for_temperature(self, rho, T):
        """Invert ``T(rho, s)`` for ``s``."""
        return rho * (self.s_ref + self.c_v * np.log(self.c_v * T / (self.K * rho ** (self.gamma_ad - 1.0))))


def _coefficient(c, rho, s):
    """Evaluate a constant or state-dependent coefficient.

    A callable must return ``(value, d/d rho, d/d s)``.
    """
    if callable(c):
        value, d_rho, d_s = c(rho, s)
        return value, d_rho, d_s
    return c, 0.0, 0.0


@dataclass
class EOSEval:
    energy: np.ndarray
    eps_rho: np.ndarray
    temperature: np.ndarray
    pressure: np.ndarray
    p_hat: np.ndarray
    dq: np.ndarray | None
    dsigma: np.ndarray | None
    dchain: tuple = ()
    eq_energy: np.ndarray | None = None

    @property
    def T(self):
        return self.temperature


@dataclass(frozen=True)
class NonEqEOS:
    """Equilibrium energy plus quadratic flux energies.

    ``higher_alpha[i]`` multiplies the order ``k = i + 2`` flux.
    """

    eq: EquilibriumEOS = field(default_factory=EquilibriumEOS)
    alpha: Coefficient = 0.0
    beta: Coefficient = 0.0
    higher_alpha: tuple = ()

    def __post_init__(self):
        for name in ("alpha", "beta"):
            c = getattr(self, name)
            if not callable(c) and c < 0:
                raise ValueError(f"{name} must be nonnegative")
        if any(a < 0 for a in self.higher_alpha):
            raise ValueError("higher_alpha entries must be nonnegative")

    def evaluate(self, rho, s, sigma=None, q=None, chain=(), check=True):
        """Energy, temperature, pressures and flux conjugates at each point."""
        rho = np.asarray(rho, dtype=float)
        s = np.asarray(s, dtype=float)
        if check and np.any(~(rho > 0)):
            raise DomainError(f"nonpositive density at index {_first_bad(~(rho > 0))}")
        eps, eps_rho, eps_s = self.eq.derivatives(rho, s)
        energy, e_rho, e_s = eps, eps_rho, eps_s
        p_extra = 0.0
        dq = dsigma = None
        if q is not None:
            a, a_rho, a_s = _coefficient(self.alpha, rho, s)
            qq = np.sum(q * q, axis=0)
            dq = a * q
            energy = energy + 0.5 * a * qq
            e_rho = e_rho + 0.5 * a_rho * qq
            e_s = e_s + 0.5 * a_s * qq
            p_extra = p_extra + np.sum(dq * q, axis=0)
        if sigma is not None:
            b, b_rho, b_s = _coefficient(self.beta, rho, s)
            ss = np.sum(sigma * sigma, axis=(0, 1))
            dsigma = b * sigma
            energy = energy + 0.5 * b * ss
            e_rho = e_rho + 0.5 * b_rho * ss
            e_s = e_s + 0.5 * b_s * ss
            p_extra = p_extra + np.sum(dsigma * sigma, axis=(0, 1))
        dchain = []
        for i, Qk in enumerate(chain):
            ak = self.higher_alpha[i]
            rank = Qk.ndim - rho.ndim
            sq = np.sum(Qk * Qk, axis=tuple(range(rank)))
            dchain.append(ak * Qk)
            energy = energy + 0.5 * ak * sq
            p_extra = p_extra + ak * sq
        if check and np.any(~(e_s > 0)):
            raise AdmissibilityError(f"nonpositive temperature at index {_first_bad(~(e_s > 0))}")
        pressure = rho * e_rho + s * e_s - energy
        return EOSEval(
            energy=energy,
            eps_rho=e_rho,
            temperature=e_s,
            pressure=pressure,
            p_hat=pressure + p_extra,
            dq=dq,
            dsigma=dsigma,
            dchain=tuple(dchain),
            eq_energy=eps,
        )


def total_energy(eos, rho, s, u, sigma=None, q=None, chain=(), grid=None):
    """Pointwise ``1/2 rho |u|^2 + eps_hat`` and, with a grid, its integral."""
    ev = eos.evaluate(rho, s, sigma, q, chain)
    e = 0.5 * rho * np.sum(np.asarray(u) ** 2, axis=0) + ev.energy
    return e, (grid.integrate(e) if grid is not None else None)


@dataclass
class DerivativeReport:
    errors: dict
    worst: str
    max_error: float
    ok: bool


def check_derivatives(eos, rho, s, sigma_packed=None, q=None, h=1e-5, tol=1e-6):
    """Compare analytic partials of ``eps_hat`` with central differences.

    Works pointwise on arrays of states.  ``sigma_packed`` uses packed
    symmetric storage; its off-diagonal partials pick up a factor 2.
    """
    rho = np.asarray(rho, dtype=float)
    s = np.asarray(s, dtype=float)
    ndim = None if sigma_packed is None else (1 if len(sigma_packed) == 1 else 2)

    def energy(r, e, sp, qq):
        full = None if sp is None else sym_to_full(sp, ndim)
        return eos.evaluate(r, e, full, qq, check=False).energy

    sigma_full = None if sigma_packed is None else sym_to_full(sigma_packed, ndim)
    ev = eos.evaluate(rho, s, sigma_full, q)
    errors = {}

    def rel(num, ana):
        scale = np.maximum(np.abs(ana), 1.0)
        return float(np.max(np.abs(num - ana) / scale))

    hr = h * max(1.0, float(np.max(np.abs(rho))))
    hs = h * max(1.0, float(np.max(np.abs(s))))
    d_rho = (energy(rho + hr, s, sigma_packed, q) - energy(rho - hr, s, sigma_packed, q)) / (2 * hr)
    errors["rho"] = rel(d_rho, ev.eps_rho)
    d_s = (energy(rho, s + hs, sigma_packed, q) - energy(rho, s - hs, sigma_packed, q)) / (2 * hs)
    errors["s"] = rel(d_s, ev.temperature)
    if q is not None:
        for a in range(len(q)):
            dq = np.zeros_like(q)
            dq[a] = h
            num = (energy(rho, s, sigma_packed, q + dq) - energy(rho, s, sigma_packed, q - dq)) / (2 * h)
            errors[f"q{a}"] = rel(num, ev.dq[a])
    if sigma_packed is not None:
        for c, (a, b) in enumerate(sym_pairs(ndim)):
            ds = np.zeros_like(sigma_packed)
            ds[c] = h
            num = (energy(rho, s, sigma_packed + ds, q) - energy(rho, s, sigma_packed - ds, q)) / (2 * h)
            weight = 1.0 if a == b else 2.0
            errors[f"sigma{a}{b}"] = rel(num, weight * ev.dsigma[a, b])
    worst = max(errors, key=errors.get)
    return DerivativeReport(errors, worst, errors[worst], errors[worst] <= tol)
