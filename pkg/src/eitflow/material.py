"""Material-frame versus spatial-frame checks for flux densities.

A :class:`DiffeoFamily` is a closed-form time-dependent map ``x = phi(t, X)``
with a closed-form inverse.  Fluxes are contravariant densities, so

    q^a(x) = F^a_A Q^A(X) / J,      sigma^ab(x) = F^a_A F^b_B S^AB(X) / J

with ``F = grad phi`` and ``J = det F``.  Two identities are checked
numerically: the material time derivative of the pulled-back flux equals
the pullback of the Truesdell rate, and energy conjugates pull back as
covariant tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp
from scipy import ndimage

from .fields import Grid, convective_index_terms, truesdell_transport
from .thermo import EquilibriumEOS, NonEqEOS

_T = sp.Symbol("t", real=True)


class OrientationError(ValueError):
    """The deformation gradient has nonpositive determinant."""


def _ref_symbols(ndim):
    return sp.symbols(" ".join(f"X{i}" for i in range(ndim)), real=True, seq=True)


def _spatial_symbols(ndim):
    return sp.symbols(" ".join(f"x{i}" for i in range(ndim)), real=True, seq=True)


def _lambdify(args, exprs, shape):
    """Vectorised numpy evaluation of a nested list of sympy expressions."""
    flat = list(sp.flatten(exprs))
    fns = [sp.lambdify(args, e, "numpy") for e in flat]

    def call(*values):
        base = np.broadcast(*[np.asarray(v, dtype=float) for v in values[1:]]).shape
        out = np.empty((len(fns),) + base)
        for i, f in enumerate(fns):
            out[i] = np.broadcast_to(np.asarray(f(*values), dtype=float), base)
        return out.reshape(shape + base)

    return call


@dataclass(frozen=True)
class DiffeoFamily:
    """Closed-form map ``phi(t, X)`` with inverse, both as sympy expressions.

    ``forward[a]`` is written in ``t, X0..`` and ``inverse[A]`` in
    ``t, x0..``; everything else (deformation gradient, Jacobian, spatial
    velocity and its gradient) is derived symbolically.
    """

    name: str
    ndim: int
    forward: tuple
    inverse: tuple

    @cached_property
    def _X(self):
        return _ref_symbols(self.ndim)

    @cached_property
    def _x(self):
        return _spatial_symbols(self.ndim)

    @cached_property
    def grad_expr(self):
        return sp.Matrix([[sp.diff(f, X) for X in self._X] for f in self.forward])

    @cached_property
    def velocity_expr(self):
        """Spatial velocity ``u(t, x) = d_t phi(t, phi^-1(t, x))``."""
        sub = dict(zip(self._X, self.inverse))
        return [sp.simplify(sp.diff(f, _T).subs(sub, simultaneous=True)) for f in self.forward]

    @cached_property
    def _fns(self):
        d = self.ndim
        X, x = self._X, self._x
        grad = self.grad_expr
        u = self.velocity_expr
        grad_u = [[sp.diff(ua, xc) for xc in x] for ua in u]
        return {
            "phi": _lambdify((_T, *X), list(self.forward), (d,)),
            "inv": _lambdify((_T, *x), list(self.inverse), (d,)),
            "F": _lambdify((_T, *X), grad.tolist(), (d, d)),
            "J": _lambdify((_T, *X), [grad.det()], (1,)),
            "u": _lambdify((_T, *x), u, (d,)),
            "grad_u": _lambdify((_T, *x), grad_u, (d, d)),
        }

    def phi(self, t, X):
        return self._fns["phi"](t, *X)

    def phi_inv(self, t, x):
        return self._fns["inv"](t, *x)

    def deformation_gradient(self, t, X):
        """``F[a, A] = d phi^a / d X^A``."""
        return self._fns["F"](t, *X)

    def jacobian(self, t, X):
        J = self._fns["J"](t, *X)[0]
        if np.any(J <= 0):
            raise OrientationError(f"{self.name}: Jacobian {float(np.min(J)):.3g} <= 0 at t = {t}")
        return J

    def velocity(self, t, x):
        return self._fns["u"](t, *x)

    def velocity_gradient(self, t, x):
        """``g[a, c] = d u^a / d x^c``."""
        return self._fns["grad_u"](t, *x)

    def compose(self, inner, name=None):
        """``self o inner``: first ``inner``, then ``self``."""
        if inner.ndim != self.ndim:
            raise ValueError("cannot compose maps of different dimension")
        X, x = self._X, self._x
        fwd = [f.subs(dict(zip(X, inner.forward)), simultaneous=True) for f in self.forward]
        mid = [g.subs(dict(zip(x, self.inverse)), simultaneous=True) for g in inner.inverse]
        return DiffeoFamily(name or f"{self.name}*{inner.name}", self.ndim, tuple(fwd), tuple(mid))

    def check_orientation(self, times, X):
        for t in times:
            self.jacobian(t, X)
        return True


# closed-form families ------------------------------------------------------------


def identity_family(ndim=2):
    X, x = _ref_symbols(ndim), _spatial_symbols(ndim)
    return DiffeoFamily("identity", ndim, tuple(X), tuple(x))


def shear_family(amplitude=0.1, length=1.0, omega=1.0):
    """Periodic shear ``x0 = X0 + a sin(omega t) sin(2 pi X1 / L)``; ``J = 1``."""
    X0, X1 = _ref_symbols(2)
    x0, x1 = _spatial_symbols(2)
    k = 2 * sp.pi / sp.nsimplify(length)
    A = sp.nsimplify(amplitude) * sp.sin(sp.nsimplify(omega) * _T)
    return DiffeoFamily("shear", 2, (X0 + A * sp.sin(k * X1), X1), (x0 - A * sp.sin(k * x1), x1))


def dilation_family(ndim=2, scale=1.0, rate=0.0):
    """Uniform dilation ``x = lambda(t) X`` with ``lambda = scale exp(rate t)``."""
    X, x = _ref_symbols(ndim), _spatial_symbols(ndim)
    lam = sp.nsimplify(scale) * sp.exp(sp.nsimplify(rate) * _T)
    return DiffeoFamily("dilation", ndim, tuple(lam * Xi for Xi in X), tuple(xi / lam for xi in x))


def rotation_family(omega=1.0):
    """Rigid rotation by angle ``omega t``."""
    X0, X1 = _ref_symbols(2)
    x0, x1 = _spatial_symbols(2)
    c, s = sp.cos(sp.nsimplify(omega) * _T), sp.sin(sp.nsimplify(omega) * _T)
    return DiffeoFamily("rotation", 2, (c * X0 - s * X1, s * X0 + c * X1), (c * x0 + s * x1, -s * x0 + c * x1))


def stretch_family(rate=0.5, skew=0.0):
    """Area-preserving stretch ``(e^{rt} X0 + skew t X1, e^{-rt} X1)``."""
    X0, X1 = _ref_symbols(2)
    x0, x1 = _spatial_symbols(2)
    r, b = sp.nsimplify(rate), sp.nsimplify(skew)
    e = sp.exp(r * _T)
    fwd = (e * X0 + b * _T * X1, X1 / e)
    inv = ((x0 - b * _T * e * x1) / e, e * x1)
    return DiffeoFamily("stretch", 2, fwd, inv)


# transforms -------------------------------------------------------------------------


def _rank_of(values, point_ndim):
    return values.ndim - point_ndim


def sample(flux, points, grid=None):
    """Evaluate a flux at ``points`` (shape ``(d, ...)``).

    ``flux`` is either a callable of the point array or an array stored on
    ``grid`` (full storage), which is then interpolated with cubic splines
    (periodic wrap on periodic grids).
    """
    if callable(flux):
        return np.asarray(flux(points), dtype=float)
    if grid is None:
        raise ValueError("array-valued flux needs the grid it lives on")
    flux = np.asarray(flux, dtype=float)
    lead = flux.ndim - grid.ndim
    coords = np.stack([(points[i] - grid.origin[i]) / grid.spacing[i] - 0.5 for i in range(grid.ndim)])
    mode = "grid-wrap" if grid.all_periodic else "nearest"
    comps = flux.reshape((-1,) + grid.shape)
    out = np.stack([ndimage.map_coordinates(c, coords, order=3, mode=mode, prefilter=True) for c in comps])
    return out.reshape(flux.shape[:lead] + points.shape[1:])


def _apply_frame(M, values, rank):
    if rank == 0:
        return values
    if rank == 1:
        return np.einsum("aA...,A...->a...", M, values)
    if rank == 2:
        return np.einsum("aA...,bB...,AB...->ab...", M, M, values)
    raise ValueError("only vector and 2-tensor densities are supported")


def _inverse_matrix(F):
    moved = np.moveaxis(F.reshape(F.shape[:2] + (-1,)), -1, 0)
    inv = np.linalg.inv(moved)
    return np.moveaxis(inv, 0, -1).reshape(F.shape)


def pushforward(family, t, flux, x, reference_grid=None):
    """Spatial density at points ``x`` from a material density ``Q`` or ``S``."""
    X = family.phi_inv(t, x)
    F = family.deformation_gradient(t, X)
    J = family.jacobian(t, X)
    values = sample(flux, X, reference_grid)
    rank = _rank_of(values, x.ndim - 1)
    return _apply_frame(F, values, rank) / J


def pullback(family, t, flux, X, spatial_grid=None):
    """Material density at reference points ``X`` from a spatial ``q`` or ``sigma``."""
    x = family.phi(t, X)
    F = family.deformation_gradient(t, X)
    J = family.jacobian(t, X)
    values = sample(flux, x, spatial_grid)
    rank = _rank_of(values, X.ndim - 1)
    return J * _apply_frame(_inverse_matrix(F), values, rank)


def piola_divergence_defect(family, t, Q, X, h=1e-5):
    """``Div Q(X) - J (div q)(phi(X))`` by central differences.

    The Piola identity makes this vanish; it is the pointwise form of the
    invariance of flux integrals under the density transform.
    """
    d = family.ndim
    div_Q = sum((Q(X + h * _unit(d, A, X)) - Q(X - h * _unit(d, A, X)))[A] / (2 * h) for A in range(d))
    x = family.phi(t, X)

    def q_at(pts):
        return pushforward(family, t, Q, pts)

    div_q = sum((q_at(x + h * _unit(d, a, x)) - q_at(x - h * _unit(d, a, x)))[a] / (2 * h) for a in range(d))
    return div_Q - family.jacobian(t, X) * div_q


def _unit(d, i, like):
    e = np.zeros((d,) + (1,) * (like.ndim - 1))
    e[i] = 1.0
    return e


# convergence tables ---------------------------------------------------------------


@dataclass
class ConvergenceTable:
    label: str
    steps: list
    errors: list

    @property
    def orders(self):
        out = []
        for i in range(1, len(self.steps)):
            e0, e1 = self.errors[i - 1], self.errors[i]
            if e0 > 0 and e1 > 0:
                out.append(math.log(e0 / e1) / math.log(self.steps[i - 1] / self.steps[i]))
            else:
                out.append(float("inf"))
        return out

    @property
    def observed_order(self):
        return min(self.orders) if self.orders else float("nan")

    @property
    def terminal_error(self):
        return self.errors[-1]

    def rows(self):
        orders = [float("nan")] + self.orders
        return [{"case": self.label, "step": s, "error": e, "order": o} for s, e, o in zip(self.steps, self.errors, orders)]


@dataclass
class SpatialFlux:
    """Closed-form spatial density ``q(t, x)`` (rank 1) or ``sigma(t, x)`` (rank 2)."""

    exprs: list
    ndim: int = 2

    @cached_property
    def rank(self):
        return 1 if not isinstance(self.exprs[0], (list, tuple)) else 2

    @cached_property
    def _fns(self):
        x = _spatial_symbols(self.ndim)
        d = self.ndim
        shape = (d,) * self.rank
        exprs = [sp.sympify(e) for e in sp.flatten(self.exprs)]
        nested = np.array(exprs, dtype=object).reshape(shape)
        dt = np.vectorize(lambda e: sp.diff(e, _T), otypes=[object])(nested)
        grads = [np.vectorize(lambda e, xc=xc: sp.diff(e, xc), otypes=[object])(nested) for xc in x]
        grad = np.stack(grads, axis=-1)
        return {
            "value": _lambdify((_T, *x), nested.tolist(), shape),
            "dt": _lambdify((_T, *x), dt.tolist(), shape),
            "grad": _lambdify((_T, *x), grad.tolist(), shape + (d,)),
        }

    def value(self, t, x):
        return self._fns["value"](t, *x)

    def time_derivative(self, t, x):
        return self._fns["dt"](t, *x)

    def gradient(self, t, x):
        """Derivative index last."""
        return self._fns["grad"](t, *x)


def truesdell_rate_exact(family, flux, t, x):
    """``d_t q + u.grad q - (grad u) q + q div u`` from closed forms."""
    u = family.velocity(t, x)
    gu = family.velocity_gradient(t, x)
    values = flux.value(t, x)
    grad = flux.gradient(t, x)
    rank = flux.rank
    advect = np.sum(np.moveaxis(grad, rank, 0) * u.reshape(u.shape[:1] + (1,) * rank + u.shape[1:]), axis=0)
    div_u = np.trace(gu, axis1=0, axis2=1)
    return flux.time_derivative(t, x) + advect - convective_index_terms(values, gu, rank) + values * div_u


def verify_truesdell_identity(family, flux, eps_list, t=0.3, X=None):
    """Compare ``d/dt`` of the pulled-back flux with the pulled-back Truesdell rate.

    The time derivative uses central differences with each step in
    ``eps_list``; the spatial side is closed-form, so the error isolates
    the time step.  Returns a :class:`ConvergenceTable` of max relative
    errors.
    """
    if X is None:
        X = reference_points(family.ndim)

    def material(tt):
        return pullback(family, tt, lambda pts: flux.value(tt, pts), X)

    exact = pullback(family, t, lambda pts: truesdell_rate_exact(family, flux, t, pts), X)
    scale = float(np.max(np.abs(exact)))
    errors = []
    for eps in eps_list:
        fd = (material(t + eps) - material(t - eps)) / (2 * eps)
        errors.append(float(np.max(np.abs(fd - exact))) / scale)
    _check_symmetric(exact, flux.rank)
    return ConvergenceTable(f"truesdell/{family.name}/rank{flux.rank}", list(eps_list), errors)


def verify_truesdell_identity_on_grid(family, flux, sizes, t=0.3, length=1.0, eps=1e-4):
    """Grid form: the spatial Truesdell rate uses the finite-difference operators.

    ``family`` must map the periodic box onto itself (e.g. the shear
    family).  The material side keeps a small central time step ``eps``; the
    table is indexed by the grid spacing.
    """
    steps, errors = [], []
    for n in sizes:
        g = Grid.uniform(n, length, periodic=True, ndim=family.ndim)
        x = g.coordinates()
        u = family.velocity(t, x)
        values = flux.value(t, x)
        rate = flux.time_derivative(t, x) + truesdell_transport(u, values, g, flux.rank)
        X = family.phi_inv(t, x)
        F = family.deformation_gradient(t, X)
        J = family.jacobian(t, X)
        pulled = J * _apply_frame(_inverse_matrix(F), rate, flux.rank)

        def material(tt):
            return pullback(family, tt, lambda pts: flux.value(tt, pts), X)

        fd = (material(t + eps) - material(t - eps)) / (2 * eps)
        steps.append(length / n)
        errors.append(float(np.max(np.abs(fd - pulled))) / float(np.max(np.abs(fd))))
    return ConvergenceTable(f"truesdell-grid/{family.name}/rank{flux.rank}", steps, errors)


def _check_symmetric(values, rank):
    if rank == 2 and not np.allclose(values, np.swapaxes(values, 0, 1), rtol=1e-12, atol=1e-12):
        raise AssertionError("tensor rate lost symmetry")


def reference_points(ndim=2, n=12, lo=0.1, hi=0.9):
    axes = [np.linspace(lo, hi, n)] * ndim
    return np.stack(np.meshgrid(*axes, indexing="ij"))


# conjugate identity -------------------------------------------------------------------


@dataclass(frozen=True)
class QuarticProbeEnergy:
    """Flux energy with quartic terms on top of a quadratic :class:`NonEqEOS`.

    ``eps + a4/4 |q|^4 + b4/4 (sigma:sigma)^2``.  The quartic parts make
    finite-difference derivatives in flux directions inexact, so their
    convergence order is observable.
    """

    base: NonEqEOS = field(default_factory=lambda: NonEqEOS(EquilibriumEOS(), alpha=0.5, beta=0.7))
    a4: float = 0.3
    b4: float = 0.2

    def evaluate(self, rho, s, sigma=None, q=None, chain=(), check=True):
        ev = self.base.evaluate(rho, s, sigma, q, chain, check=check)
        if q is not None:
            qq = np.sum(q * q, axis=0)
            ev.energy = ev.energy + 0.25 * self.a4 * qq**2
            ev.dq = ev.dq + self.a4 * qq * q
        if sigma is not None:
            ss = np.sum(sigma * sigma, axis=(0, 1))
            ev.energy = ev.energy + 0.25 * self.b4 * ss**2
            ev.dsigma = ev.dsigma + self.b4 * ss * sigma
        return ev


def material_energy(family, eos, t, X, rho_ref, s_ref, Q, S):
    """``L(Q, S) = eps_hat(rho, s, q, sigma)(phi(X)) J`` pointwise."""
    F = family.deformation_gradient(t, X)
    J = family.jacobian(t, X)
    q = np.einsum("aA...,A...->a...", F, Q) / J
    sigma = np.einsum("aA...,bB...,AB...->ab...", F, F, S) / J
    return eos.evaluate(rho_ref / J, s_ref / J, sigma, q).energy * J


def verify_conjugate_identity(family, eos, t, X, rho_ref, s_ref, Q, S, steps, seed=0):
    """Directional derivatives of the material energy versus pulled-back conjugates.

    ``dL/dQ_A = F^a_A (d eps/d q)_a`` and ``dL/dS_AB = F^a_A F^b_B (d eps/d sigma)_ab``.
    Random smooth directions are drawn from ``seed``; the returned tables
    hold max relative errors of central differences for each step.
    """
    rng = np.random.default_rng(seed)
    shape = X.shape[1:]
    d = family.ndim
    dQ = rng.standard_normal((d,) + shape)
    dS = rng.standard_normal((d, d) + shape)
    dS = 0.5 * (dS + np.swapaxes(dS, 0, 1))
    F = family.deformation_gradient(t, X)
    J = family.jacobian(t, X)
    q = np.einsum("aA...,A...->a...", F, Q) / J
    sigma = np.einsum("aA...,bB...,AB...->ab...", F, F, S) / J
    ev = eos.evaluate(rho_ref / J, s_ref / J, sigma, q)
    conj_Q = np.einsum("aA...,a...->A...", F, ev.dq)
    conj_S = np.einsum("aA...,bB...,ab...->AB...", F, F, ev.dsigma)
    exact_Q = np.sum(conj_Q * dQ, axis=0)
    exact_S = np.sum(conj_S * dS, axis=(0, 1))

    def L(Qv, Sv):
        return material_energy(family, eos, t, X, rho_ref, s_ref, Qv, Sv)

    errs_Q, errs_S = [], []
    for h in steps:
        fd_Q = (L(Q + h * dQ, S) - L(Q - h * dQ, S)) / (2 * h)
        fd_S = (L(Q, S + h * dS) - L(Q, S - h * dS)) / (2 * h)
        errs_Q.append(float(np.max(np.abs(fd_Q - exact_Q)) / np.max(np.abs(exact_Q))))
        errs_S.append(float(np.max(np.abs(fd_S - exact_S)) / np.max(np.abs(exact_S))))
    return (
        ConvergenceTable(f"conjugate/{family.name}/vector", list(steps), errs_Q),
        ConvergenceTable(f"conjugate/{family.name}/tensor", list(steps), errs_S),
    )


def material_conjugates(family, eos, t, X, rho_ref, s_ref, Q, S):
    """Closed-form ``(dL/dQ, dL/dS)`` from the spatial conjugates."""
    F = family.deformation_gradient(t, X)
    J = family.jacobian(t, X)
    q = np.einsum("aA...,A...->a...", F, Q) / J
    sigma = np.einsum("aA...,bB...,AB...->ab...", F, F, S) / J
    ev = eos.evaluate(rho_ref / J, s_ref / J, sigma, q)
    return np.einsum("aA...,a...->A...", F, ev.dq), np.einsum("aA...,bB...,ab...->AB...", F, F, ev.dsigma)
