"""Closed-form and ODE reference solutions.

These are written independently of :mod:`t2flow.evolution` so that
agreement between the two is a genuine cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

SQRT10 = math.sqrt(10.0)
CD_FIXED_POINT = (2.0 / SQRT10, 1.0 / SQRT10)
CD_LINEARIZATION = np.array([[-0.5, 1.0], [-2.5, 0.0]])


class OracleError(RuntimeError):
    """Reference integration failed (step underflow or singularity)."""

    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


@dataclass(frozen=True)
class ReferenceTrajectory:
    """``values[k]`` holds the model variables at ``taus[k]``; ``names`` labels the columns."""

    taus: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


class KasnerValues(NamedTuple):
    v: float
    ell_hat: float
    rho: float
    q: float


def kasner_exact(a: float, b: float, c: float, tau: float, rho0: float = 0.0) -> KasnerValues:
    """Polarised Kasner: V = aτ + b, l̂ = (a²/2 - 2)τ + c, ρ constant, Q = 0."""
    return KasnerValues(a * tau + b, (0.5 * a * a - 2.0) * tau + c, rho0, 0.0)


PH_NAMES = ("v", "v_tau", "q", "q_tau", "rho", "ell")


def _ph_rhs(tau, y, pi_q):
    v, v_tau, q, rho, ell = y
    try:
        q_tau = pi_q * math.exp(-rho - 2.0 * (v - tau))
        e2vt = math.exp(2.0 * (v - tau))
        rho_tau = math.exp(ell)
    except OverflowError:
        raise OracleError(f"PH right-hand side overflows at tau={tau:.6g}", tau=float(tau)) from None
    return [
        v_tau,
        -rho_tau * v_tau + e2vt * q_tau * q_tau,
        q_tau,
        rho_tau,
        0.5 * (v_tau * v_tau + e2vt * q_tau * q_tau) - rho_tau - 2.0,
    ]


def ph_ode(
    initial,
    tau_end: float,
    tol: float = 1e-10,
    tau0: float = 0.0,
    t_eval=None,
) -> ReferenceTrajectory:
    """Pseudo-homogeneous reduction integrated with an embedded RK 5(4) method.

    ``initial`` is (V, V_τ, Q, π_Q, ρ, l) at ``tau0``; π_Q is carried as an
    exact constant. Output columns follow PH_NAMES.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    v, v_tau, q, pi_q, rho, ell = (float(x) for x in initial)
    sol = solve_ivp(
        _ph_rhs, (tau0, tau_end), [v, v_tau, q, rho, ell], method="RK45",
        rtol=tol, atol=tol * 1e-2, args=(pi_q,), t_eval=t_eval, dense_output=False,
    )
    if sol.status != 0:
        raise OracleError(f"PH integration failed: {sol.message}", tau=float(sol.t[-1]))
    v, v_tau, q, rho, ell = sol.y
    q_tau = pi_q * np.exp(-rho - 2.0 * (v - sol.t))
    return ReferenceTrajectory(sol.t.copy(), np.column_stack([v, v_tau, q, q_tau, rho, ell]), PH_NAMES)


def cd_rhs(tau, y):
    c, d = y
    return [d - 0.5 * c, d / (c * c) - 2.5 * d]


def cd_eigenvalues() -> np.ndarray:
    """Eigenvalues of the linearisation at the fixed point, -1/4 ± i√39/4."""
    return np.linalg.eigvals(CD_LINEARIZATION)


def cd_ode(c0: float, d0: float, tau_end: float, tol: float = 1e-10, t_eval=None, c_min: float = 1e-6):
    """Integrate the (c̄, d̄) system from τ = 0.

    Raises OracleError at the τ where |c̄| drops below ``c_min``.
    """
    if abs(c0) < c_min:
        raise OracleError("initial c is at the singularity c = 0", tau=0.0)

    def hit_zero(tau, y):
        return abs(y[0]) - c_min

    hit_zero.terminal = True
    sol = solve_ivp(
        cd_rhs, (0.0, tau_end), [c0, d0], method="RK45", rtol=tol, atol=tol * 1e-2,
        t_eval=t_eval, events=hit_zero,
    )
    if sol.status == 1:
        raise OracleError("c approached the singularity c = 0", tau=float(sol.t_events[0][0]))
    if sol.status != 0:
        raise OracleError(f"c-d integration failed: {sol.message}", tau=float(sol.t[-1]))
    return ReferenceTrajectory(sol.t.copy(), sol.y.T.copy(), ("c", "d"))


def cd_remainder(c: float, d: float) -> float:
    """(10c - 10d + 3√10)/4 · c² - √10·c·d; vanishes to second order at the origin."""
    return (10.0 * c - 10.0 * d + 3.0 * SQRT10) / 4.0 * c * c - SQRT10 * c * d


def _sink_basis() -> np.ndarray:
    vals, vecs = np.linalg.eig(CD_LINEARIZATION)
    k = int(np.argmax(vals.imag))
    return np.linalg.inv(np.column_stack([vecs[:, k].real, vecs[:, k].imag]))


_SINK_INV = _sink_basis()


def sink_norm(c, d):
    """Euclidean norm of (c, d) in the real Jordan basis of the linearisation.

    Along solutions of the linearised system this is exactly
    ``const * e^{-τ/4}``, so its log-slope measures the spiral's envelope
    without the oscillation of |c| or |d| individually.
    """
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    a = _SINK_INV[0, 0] * c + _SINK_INV[0, 1] * d
    b = _SINK_INV[1, 0] * c + _SINK_INV[1, 1] * d
    return np.hypot(a, b)
