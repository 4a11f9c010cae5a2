"""Monitored scalars of a FieldState.

Conserved quantities, the energy hierarchy with its correction, the
normalised attractor variables, bootstrap bound functions and the plot
quantities S, T, E_V, E_Q, W.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .fields import FieldState, deriv_theta, mean

SQRT10 = math.sqrt(10.0)
C_STAR = 2.0 / SQRT10
D_STAR = 1.0 / SQRT10


class _Pointwise(NamedTuple):
    v_tau: np.ndarray
    q_tau: np.ndarray
    v_theta: np.ndarray
    q_theta: np.ndarray
    j: np.ndarray
    rho_tau: np.ndarray


def _pointwise(state: FieldState) -> _Pointwise:
    grid = state.grid
    vt = state.v_tau
    qt = state.q_tau
    vth = deriv_theta(state.v, grid)
    qth = deriv_theta(state.q, grid)
    e2tr = np.exp(2.0 * (state.tau - state.rho))
    e2vt = np.exp(2.0 * (state.v - state.tau))
    j = 0.5 * (vt**2 + e2tr * vth**2 + e2vt * (qt**2 + e2tr * qth**2))
    rho_tau = state.twist * np.exp(state.ell)
    return _Pointwise(vt, qt, vth, qth, j, rho_tau)


def energy_density(state: FieldState) -> np.ndarray:
    """Pointwise J, the right-hand side of the l evolution equation."""
    return _pointwise(state).j


def conserved_ab(state: FieldState) -> tuple[float, float]:
    """A = ⟨π_V - π_Q Q⟩ and B = ⟨π_Q⟩."""
    return mean(state.pi_v - state.pi_q * state.q), mean(state.pi_q)


class EnergySuite(NamedTuple):
    energy: float
    volume: float
    twist_y: float
    correction: float
    corrected_h: float
    c_var: float
    d_var: float
    omega: float
    h_positive: bool


def energy_suite(state: FieldState) -> EnergySuite:
    """E, Π, Y, Λ, H, c, d, Ω. c and d are NaN (with ``h_positive`` False) when H <= 0."""
    tau = state.tau
    p = _pointwise(state)
    e_rho = np.exp(state.rho)
    energy = mean(np.exp(state.rho - 2.0 * tau) * p.j)
    volume = mean(e_rho)
    twist_y = mean(np.exp(state.ell + state.rho + 2.0 * tau))
    v_mean = mean(state.v)
    correction = 0.5 * math.exp(-2.0 * tau) * mean(p.v_tau * (state.v - v_mean - 1.0) * e_rho)
    h = volume * (energy + correction)
    if h > 0.0:
        root_h = math.sqrt(h)
        c = volume / (math.exp(tau) * root_h) - C_STAR
        d = twist_y / (math.exp(3.0 * tau) * root_h) - D_STAR
    else:
        c = d = math.nan
    y_tau = mean(np.exp(state.ell + state.rho + 2.0 * tau) * p.j)
    omega = y_tau - math.exp(2.0 * tau) * energy * twist_y / volume
    return EnergySuite(energy, volume, twist_y, correction, h, c, d, omega, h > 0.0)


def twist_y_tau(state: FieldState) -> float:
    """Y_τ = ⟨e^{l+ρ+2τ} J⟩."""
    return mean(np.exp(state.ell + state.rho + 2.0 * state.tau) * energy_density(state))


class BergerSuite(NamedTuple):
    s_diag: float
    t_diag: float
    ev_diag: float
    eq_diag: float
    w_diag: float


def berger_suite(state: FieldState) -> BergerSuite:
    """S, T, E_V, E_Q, W under the e^{ρ-τ/2} dθ volume form.

    S and T are τ-derivatives of weighted integrals, expanded with the
    product rule and the l, ρ evolution equations. W is -inf when its
    argument vanishes.
    """
    tau = state.tau
    p = _pointwise(state)
    w = np.exp(state.rho - 0.5 * tau)
    ell_tau = p.j - p.rho_tau - 2.0
    s = mean((ell_tau + state.ell * (p.rho_tau - 0.5)) * w)
    t = mean((p.rho_tau + state.rho * (p.rho_tau - 0.5)) * w)
    e2tr = np.exp(2.0 * (tau - state.rho))
    ev = mean((p.v_tau**2 + e2tr * p.v_theta**2) * w)
    eq = mean(np.exp(2.0 * (state.v - tau)) * (p.q_tau**2 + e2tr * p.q_theta**2) * w)
    arg = abs(mean(p.v_tau * w))
    wd = math.log(arg) if arg > 0.0 else -math.inf
    return BergerSuite(s, t, ev, eq, wd)


def constraint_defect(state: FieldState) -> np.ndarray:
    """Pointwise defect l_θ - (V_θ V_τ + e^{2(V-τ)} Q_θ Q_τ)."""
    p = _pointwise(state)
    ell_th = deriv_theta(state.ell, state.grid)
    return ell_th - (p.v_theta * p.v_tau + np.exp(2.0 * (state.v - state.tau)) * p.q_theta * p.q_tau)


def constraint_residual(state: FieldState) -> float:
    return float(np.max(np.abs(constraint_defect(state))))


class BootstrapBounds(NamedTuple):
    f_bound: float
    f_tilde_bound: float
    omega_bound_ok: bool


def bootstrap_bounds(state: FieldState, rho0_ref: float, rtol: float = 1e-9) -> BootstrapBounds:
    """F, F̃ and the check |Ω| <= e^τ E Y_τ.

    ``rho0_ref`` is min ρ on the initial slice of the run; it enters both
    F and F̃. Π_τ is evaluated as e^{-2τ} Y.
    """
    tau = state.tau
    p = _pointwise(state)
    es = energy_suite(state)
    a_const, _ = conserved_ab(state)
    pi, e = es.volume, es.energy
    pi_tau = math.exp(-2.0 * tau) * es.twist_y
    pe = max(pi * e, 0.0)
    grow = float(np.exp(2.0 * math.sqrt(pe)))
    f = (
        mean(np.exp(state.rho - tau) * p.rho_tau * p.j)
        + math.exp(-tau) * (1.0 + grow) * (pi + pi_tau)
        + math.sqrt(pe)
        + math.exp(-0.5 * rho0_ref) * grow * pi * math.sqrt(max(e, 0.0))
    )
    f_tilde = abs(a_const) * pi * (
        math.exp(-tau) * (1.0 + pi_tau / pi) + math.exp(-0.5 * rho0_ref) * math.sqrt(max(e, 0.0))
    )
    y_tau = mean(np.exp(state.ell + state.rho + 2.0 * tau) * p.j)
    bound = math.exp(tau) * e * y_tau
    ok = abs(es.omega) <= bound + rtol * (abs(y_tau) + abs(es.omega))
    return BootstrapBounds(f, f_tilde, bool(ok))


@dataclass(frozen=True)
class DiagnosticsRecord:
    tau: float
    a_const: float
    b_const: float
    energy: float
    volume: float
    twist_y: float
    correction: float
    corrected_h: float
    c_var: float
    d_var: float
    omega: float
    f_bound: float
    f_tilde_bound: float
    s_diag: float
    t_diag: float
    ev_diag: float
    eq_diag: float
    w_diag: float
    constraint_residual: float
    rho_min: float
    el_wmean: float
    j_wmean: float
    v_mean: float
    # raw (unnormalised) weighted integrals, before dividing by the weight mean
    el_wraw: float
    j_wraw: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


# CSV header name -> record attribute; order is frozen.
CSV_COLUMNS = (
    ("tau", "tau"),
    ("A", "a_const"),
    ("B", "b_const"),
    ("E", "energy"),
    ("Pi", "volume"),
    ("Y", "twist_y"),
    ("Lambda", "correction"),
    ("H", "corrected_h"),
    ("c", "c_var"),
    ("d", "d_var"),
    ("Omega", "omega"),
    ("F", "f_bound"),
    ("Ftilde", "f_tilde_bound"),
    ("S", "s_diag"),
    ("T", "t_diag"),
    ("EV", "ev_diag"),
    ("EQ", "eq_diag"),
    ("W", "w_diag"),
    ("constraint_residual", "constraint_residual"),
    ("rho_min", "rho_min"),
    ("el_wmean", "el_wmean"),
    ("j_wmean", "j_wmean"),
    ("v_mean", "v_mean"),
)


def compute_record(state: FieldState, rho0_ref: float | None = None) -> DiagnosticsRecord:
    """Every monitored scalar on one slice."""
    if rho0_ref is None:
        rho0_ref = float(np.min(state.rho))
    tau = state.tau
    a_const, b_const = conserved_ab(state)
    es = energy_suite(state)
    bs = berger_suite(state)
    bb = bootstrap_bounds(state, rho0_ref)
    j = energy_density(state)
    w_half = np.exp(state.rho - 0.5 * tau)
    w_two = np.exp(state.rho - 2.0 * tau)
    el_wraw = mean(np.exp(state.ell) * w_half)
    j_wraw = mean(j * w_two)
    return DiagnosticsRecord(
        tau=tau,
        a_const=a_const,
        b_const=b_const,
        energy=es.energy,
        volume=es.volume,
        twist_y=es.twist_y,
        correction=es.correction,
        corrected_h=es.corrected_h,
        c_var=es.c_var,
        d_var=es.d_var,
        omega=es.omega,
        f_bound=bb.f_bound,
        f_tilde_bound=bb.f_tilde_bound,
        s_diag=bs.s_diag,
        t_diag=bs.t_diag,
        ev_diag=bs.ev_diag,
        eq_diag=bs.eq_diag,
        w_diag=bs.w_diag,
        constraint_residual=constraint_residual(state),
        rho_min=float(np.min(state.rho)),
        el_wmean=el_wraw / mean(w_half),
        j_wmean=j_wraw / mean(w_two),
        v_mean=mean(state.v),
        el_wraw=el_wraw,
        j_wraw=j_wraw,
    )
