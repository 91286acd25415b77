"""Networks of mass-spring subsystems with friction and heat exchange.

Subsystem ``A`` has position ``x_A``, velocity ``v_A``, entropy ``S_A`` and
internal energy ``U_A = C_A exp(S_A / C_A)``, so ``T^A = exp(S_A / C_A)``.
The Lagrangian is ``sum 1/2 m_A v_A^2 - 1/2 k_A x_A^2 - U_A(S_A)`` minus an
optional coupling spring ``1/2 k_c (x_1 - x_2)^2``.  Friction is
``F^A = -gamma_A v_A``.

Heat exchange uses ``J_AB = -kappa_AB`` for ``A != B`` and

    J_AA = sum_{B != A} kappa_AB [T^B/T^A - (T^A - T^B)^2 / (2 T^A T^B)],

which is symmetric and makes ``sum_B J_AB (T^A - T^B)`` the heat flowing
into ``A``.  The entropy and internal-entropy rates are

    dS_A/dt      = gamma_A v_A^2 / T^A - sum_B kappa_AB (T^A - T^B) / T^A
    dSigma_A/dt  = gamma_A v_A^2 / T^A + sum_B kappa_AB (T^A - T^B)^2 / (2 T^A T^B)

and the thermal displacements obey ``dGamma^A/dt = T^A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .thermo import AdmissibilityError


@dataclass(frozen=True)
class FiniteSystem:
    masses: tuple
    stiffness: tuple
    heat_capacity: tuple
    friction: tuple
    conductance: tuple  # N x N nested tuple
    coupling_stiffness: float = 0.0

    def __post_init__(self):
        n = len(self.masses)
        for name in ("stiffness", "heat_capacity", "friction"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} needs {n} entries")
        K = np.asarray(self.conductance, dtype=float)
        if K.shape != (n, n):
            raise ValueError(f"conductance must be {n}x{n}")
        if not np.allclose(K, K.T) or np.any(K < 0):
            raise ValueError("conductance must be symmetric and nonnegative")
        if any(m <= 0 for m in self.masses) or any(c <= 0 for c in self.heat_capacity):
            raise ValueError("masses and heat capacities must be positive")
        if any(g < 0 for g in self.friction):
            raise ValueError("friction coefficients must be nonnegative")
        if self.coupling_stiffness and n < 2:
            raise ValueError("a coupling spring needs two subsystems")

    @property
    def n(self):
        return len(self.masses)

    @property
    def kappa(self):
        return np.asarray(self.conductance, dtype=float)

    def temperatures(self, S):
        S = np.asarray(S)
        C = np.asarray(self.heat_capacity).reshape((-1,) + (1,) * (S.ndim - 1))
        return np.exp(S / C)

    def internal_energy(self, S):
        C = np.asarray(self.heat_capacity)
        return C * np.exp(np.asarray(S) / C)

    def exchange_matrix(self, T):
        """Symmetric ``J_AB`` evaluated at temperatures ``T``."""
        K = self.kappa
        J = -K.copy()
        np.fill_diagonal(J, 0.0)
        for A in range(self.n):
            acc = 0.0
            for B in range(self.n):
                if B != A:
                    acc += K[A, B] * (T[B] / T[A] - (T[A] - T[B]) ** 2 / (2.0 * T[A] * T[B]))
            J[A, A] = acc
        return J

    def forces(self, x):
        f = -np.asarray(self.stiffness) * x
        if self.coupling_stiffness:
            d = x[0] - x[1]
            f[0] -= self.coupling_stiffness * d
            f[1] += self.coupling_stiffness * d
        return f

    def energy(self, state):
        st = FiniteState.unpack(state, self.n)
        kinetic = 0.5 * np.sum(np.asarray(self.masses) * st.v**2)
        potential = 0.5 * np.sum(np.asarray(self.stiffness) * st.x**2)
        if self.coupling_stiffness:
            potential += 0.5 * self.coupling_stiffness * (st.x[0] - st.x[1]) ** 2
        return float(kinetic + potential + np.sum(self.internal_energy(st.S)))


@dataclass
class FiniteState:
    x: np.ndarray
    v: np.ndarray
    S: np.ndarray
    Sigma: np.ndarray
    Gamma: np.ndarray

    def pack(self):
        return np.concatenate([self.x, self.v, self.S, self.Sigma, self.Gamma])

    @classmethod
    def unpack(cls, y, n):
        y = np.asarray(y)
        return cls(*(y[i * n : (i + 1) * n] for i in range(5)))


def rhs(system, state):
    """Packed time derivative of ``(x, v, S, Sigma, Gamma)``."""
    n = system.n
    st = FiniteState.unpack(state, n)
    T = system.temperatures(st.S)
    if np.any(~(T > 0)):
        raise AdmissibilityError("nonpositive subsystem temperature")
    gamma = np.asarray(system.friction)
    K = system.kappa
    friction_heat = gamma * st.v**2
    a = (system.forces(st.x) - gamma * st.v) / np.asarray(system.masses)
    dT = T[:, None] - T[None, :]
    dS = friction_heat / T - np.sum(K * dT, axis=1) / T
    dSigma = friction_heat / T + np.sum(K * dT**2 / (2.0 * T[:, None] * T[None, :]), axis=1)
    return np.concatenate([st.v, a, dS, dSigma, T])


def exchange_rate(system, state):
    """``sum_B J_AB``: the entropy exchanged with the other subsystems."""
    st = FiniteState.unpack(state, system.n)
    return np.sum(system.exchange_matrix(system.temperatures(st.S)), axis=1)


@dataclass
class Trajectory:
    system: FiniteSystem
    t: np.ndarray
    y: np.ndarray  # (5n, nt)

    def states(self):
        return [FiniteState.unpack(self.y[:, i], self.system.n) for i in range(self.y.shape[1])]


def integrate(system, initial, t_end, n_samples=401, rtol=1e-10, atol=1e-12):
    """Adaptive DOP853 integration sampled on a uniform time grid."""
    y0 = initial.pack() if isinstance(initial, FiniteState) else np.asarray(initial, dtype=float)
    t_eval = np.linspace(0.0, t_end, n_samples)
    sol = solve_ivp(lambda t, y: rhs(system, y), (0.0, t_end), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    return Trajectory(system, sol.t, sol.y)


@dataclass
class FiniteAudit:
    energy_drift: float
    min_sigma_rate: float
    sigma_nondecreasing: bool
    exchange_error: float
    gamma_error: float
    final_temperatures: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def passes(self, energy_tol=1e-9, rate_tol=1e-12):
        return self.energy_drift < energy_tol and self.min_sigma_rate >= -rate_tol and self.sigma_nondecreasing


def audit(traj):
    """First and second law checks along a trajectory.

    ``exchange_error`` compares ``(S_A - Sigma_A)(t) - (S_A - Sigma_A)(0)``
    with the trapezoidal integral of ``sum_B J_AB``; ``gamma_error`` does
    the same for ``Gamma^A`` against ``int T^A``.
    """
    sys_ = traj.system
    n = sys_.n
    E = np.array([sys_.energy(traj.y[:, i]) for i in range(traj.y.shape[1])])
    rates = np.array([rhs(sys_, traj.y[:, i]) for i in range(traj.y.shape[1])]).T
    sigma_rates = rates[3 * n : 4 * n]
    Sig = traj.y[3 * n : 4 * n]
    S = traj.y[2 * n : 3 * n]
    G = traj.y[4 * n : 5 * n]
    exch = np.array([exchange_rate(sys_, traj.y[:, i]) for i in range(traj.y.shape[1])]).T
    T = sys_.temperatures(S)

    def cumtrapz(f):
        out = np.zeros_like(f)
        out[:, 1:] = np.cumsum(0.5 * (f[:, 1:] + f[:, :-1]) * np.diff(traj.t), axis=1)
        return out

    diff = (S - Sig) - (S - Sig)[:, :1]
    scale = max(1.0, float(np.max(np.abs(diff))))
    return FiniteAudit(
        energy_drift=float(np.max(np.abs(E - E[0])) / abs(E[0])),
        min_sigma_rate=float(np.min(sigma_rates)),
        sigma_nondecreasing=bool(np.all(np.diff(Sig, axis=1) >= -1e-12)),
        exchange_error=float(np.max(np.abs(diff - cumtrapz(exch)))) / scale,
        gamma_error=float(np.max(np.abs((G - G[:, :1]) - cumtrapz(T)))) / max(1.0, float(np.max(np.abs(G)))),
        final_temperatures=T[:, -1],
    )


def two_box_demo(friction=0.1, conductance=0.5, coupling=0.3):
    """Two damped oscillators sharing a spring and a heat link."""
    system = FiniteSystem(
        masses=(1.0, 2.0),
        stiffness=(1.0, 0.5),
        heat_capacity=(1.0, 1.5),
        friction=(friction, 0.5 * friction),
        conductance=((0.0, conductance), (conductance, 0.0)),
        coupling_stiffness=coupling,
    )
    initial = FiniteState(
        x=np.array([1.0, -0.5]),
        v=np.array([0.0, 0.3]),
        S=np.array([0.4, -0.2]),
        Sigma=np.zeros(2),
        Gamma=np.zeros(2),
    )
    return system, initial
