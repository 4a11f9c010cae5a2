"""Constraint-satisfying initial data.

Random profiles are finite Fourier sums drawn from numpy's Philox
counter-based generator keyed by (seed, stream), so a given seed
reproduces the same coefficients on every platform and at every grid
size. The momentum constraint is then solved by quadrature for l after
removing its periodicity obstruction with a one-parameter shift of π_V
along V_θ.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .diagnostics import conserved_ab, energy_suite
from .fields import FieldState, PeriodicGrid, UsageError, deriv_theta, mean

MODES = (
    "kasner",
    "polarised_random",
    "b0_random",
    "generic_random",
    "pseudo_homogeneous",
    "near_attractor",
)
RANDOM_BASES = ("polarised_random", "b0_random", "generic_random")

# l on the attractor, e^l = 1/2
_ELL_ATTRACTOR = math.log(0.5)

# Philox stream ids for the sampled profiles
_STREAM_V, _STREAM_VT, _STREAM_Q, _STREAM_QT, _STREAM_RHO = range(5)


class ConstraintError(RuntimeError):
    """The momentum constraint has no periodic solution for these inputs."""


@dataclass(frozen=True)
class SamplerSpec:
    """Recipe for one initial data set.

    ``ell_mean`` is the value l(θ=0). ``b_balance`` (B ≠ 0 only) adds
    the constants from :func:`b_balance_offsets` to V and V_τ so the
    sample starts near the B ≠ 0 balance point. In near_attractor mode ``rho0`` and
    the additive constant of l are replaced by the values that put the
    slice on the attractor; ``tau0`` defaults to log(1/eps) there and to
    0 elsewhere.
    """

    mode: str = "b0_random"
    seed: int = 0
    m_max: int = 8
    amplitude: float = 0.05
    target_b: float = 0.0
    ell_mean: float = math.log(0.5)
    rho0: float = 0.0
    kasner_a: float = 1.0
    kasner_b: float = 0.0
    kasner_c: float = 0.0
    tau0: float | None = None
    rho_amplitude: float = 0.0
    spectral_ell: bool = False
    attractor_base: str | None = None
    attractor_eps: float = 0.1
    attractor_energy: float = 1.0
    attractor_c: float = 0.0
    b_balance: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.m_max < 1:
            raise UsageError("m_max must be positive")
        if self.amplitude < 0.0:
            raise UsageError("amplitude must be non-negative")
        if self.mode in ("polarised_random", "b0_random") and self.target_b != 0.0:
            raise UsageError(f"mode {self.mode} requires target_b = 0")
        base = self.attractor_base
        if base is not None and base not in RANDOM_BASES:
            raise UsageError(f"attractor_base must be one of {RANDOM_BASES}")
        if base in ("polarised_random", "b0_random") and self.target_b != 0.0:
            raise UsageError(f"attractor base {base} requires target_b = 0")
        if not 0.0 < self.attractor_eps < 1.0:
            raise UsageError("attractor_eps must lie in (0, 1)")
        if self.attractor_energy <= 0.0:
            raise UsageError("attractor_energy must be positive")
        if self.b_balance and (self.target_b == 0.0 or self.mode not in RANDOM_BASES + ("near_attractor",)):
            raise UsageError("b_balance needs target_b != 0 and a random or near_attractor mode")

    @property
    def start_tau(self) -> float:
        if self.tau0 is not None:
            return float(self.tau0)
        if self.mode == "near_attractor":
            return math.log(1.0 / self.attractor_eps)
        return 0.0

    @property
    def base_mode(self) -> str:
        if self.attractor_base is not None:
            return self.attractor_base
        return "b0_random" if self.target_b == 0.0 else "generic_random"

    def as_dict(self) -> dict:
        return asdict(self)


def _generator(seed: int, stream: int) -> np.random.Generator:
    key = ((stream & 0xFFFFFFFFFFFFFFFF) << 64) | (seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sample_fourier(seed: int, m_max: int, amplitude: float, grid: PeriodicGrid, stream: int = 0) -> np.ndarray:
    """Σ_{m=1}^{m_max} (a_m cos 2πmθ + b_m sin 2πmθ), a_m, b_m ~ N(0, (amplitude/m)²)."""
    if m_max >= grid.n_points / 4:
        raise UsageError(f"m_max={m_max} is not resolved on N={grid.n_points} (need m_max < N/4)")
    coeffs = _generator(seed, stream).standard_normal((m_max, 2))
    theta = grid.theta
    out = np.zeros(grid.n_points)
    for m in range(1, m_max + 1):
        scale = amplitude / m
        phase = 2.0 * np.pi * m * theta
        out += scale * (coeffs[m - 1, 0] * np.cos(phase) + coeffs[m - 1, 1] * np.sin(phase))
    return out


def _spectral_antiderivative(f: np.ndarray) -> np.ndarray:
    """Periodic antiderivative F of a zero-mean f, normalised so F(0) = 0."""
    n = f.shape[0]
    fh = np.fft.rfft(f)
    k = np.arange(fh.shape[0])
    gh = np.zeros_like(fh)
    gh[1:] = fh[1:] / (2j * np.pi * k[1:])
    if n % 2 == 0:
        gh[-1] = 0.0
    g = np.fft.irfft(gh, n)
    return g - g[0]


class ConstraintSolution(NamedTuple):
    ell: np.ndarray
    pi_v: np.ndarray


def solve_constraint(v, q, pi_v, pi_q, rho, ell0: float, grid: PeriodicGrid, tau: float = 0.0,
                     spectral: bool = False) -> ConstraintSolution:
    """Solve l_θ = e^{-ρ}(V_θ π_V + Q_θ π_Q) for l with l(0) = ell0.

    π_V is first shifted along V_θ so the right-hand side has zero mean.
    The integral is a cumulative trapezoid rule (residual O(h²) against
    the fourth-order derivative) or, with ``spectral``, an FFT
    antiderivative (residual set by the derivative stencil, O(h⁴)).
    ``tau`` is accepted for signature symmetry; the integrand does not
    depend on it in momentum variables.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in (v, q, pi_v, pi_q, rho)]
    for a in arrays:
        if a.shape != (grid.n_points,):
            raise UsageError(f"array of shape {a.shape} does not match grid size {grid.n_points}")
    v, q, pi_v, pi_q, rho = arrays
    e_mrho = np.exp(-rho)
    v_th = deriv_theta(v, grid)
    q_th = deriv_theta(q, grid)
    obstruction = mean(e_mrho * (v_th * pi_v + q_th * pi_q))
    norm = mean(e_mrho * v_th * v_th)
    scale = mean(np.abs(e_mrho * (v_th * pi_v + q_th * pi_q))) + 1e-300
    if norm > 0.0:
        pi_v = pi_v - (obstruction / norm) * v_th
    elif abs(obstruction) > 1e-14 * scale:
        raise ConstraintError(
            f"periodicity obstruction {obstruction:.3e} cannot be removed: V is constant in theta"
        )
    integrand = e_mrho * (v_th * pi_v + q_th * pi_q)
    if spectral:
        ell = ell0 + _spectral_antiderivative(integrand - mean(integrand))
    else:
        closed = np.append(integrand, integrand[0])
        ell = ell0 + cumulative_trapezoid(closed, dx=grid.spacing, initial=0.0)[:-1]
    return ConstraintSolution(ell, pi_v)


def _random_fields(spec: SamplerSpec, base: str, grid: PeriodicGrid, tau: float, rho0: float):
    """Sampled (V, V_τ, Q, Q_τ, ρ) with zero-mean fluctuations."""
    v = sample_fourier(spec.seed, spec.m_max, spec.amplitude, grid, _STREAM_V)
    v_tau = sample_fourier(spec.seed, spec.m_max, spec.amplitude, grid, _STREAM_VT)
    if base == "polarised_random":
        q = np.zeros(grid.n_points)
        q_tau = np.zeros(grid.n_points)
    else:
        q = sample_fourier(spec.seed, spec.m_max, spec.amplitude, grid, _STREAM_Q)
        q_tau = sample_fourier(spec.seed, spec.m_max, spec.amplitude, grid, _STREAM_QT)
    rho = np.full(grid.n_points, rho0)
    if spec.rho_amplitude > 0.0:
        rho = rho + sample_fourier(spec.seed, spec.m_max, spec.rho_amplitude, grid, _STREAM_RHO)
    return v, v_tau, q, q_tau, rho


def _assemble(spec, base, grid, tau, fields, scale, ell0, ell_ref):
    """Scale fluctuations, fix B and solve the constraint.

    ``ell_ref`` is the l value the balance offsets assume.
    """
    v, v_tau, q, q_tau, rho = fields
    v_off = v_tau_off = 0.0
    if spec.b_balance:
        v_off, v_tau_off = b_balance_offsets(spec.target_b, tau, math.log(mean(np.exp(rho))), ell_ref)
    v = scale * v + v_off
    q = scale * q
    pi_v = np.exp(rho) * (scale * v_tau + v_tau_off)
    pi_q = np.exp(rho + 2.0 * (v - tau)) * scale * q_tau
    if base != "polarised_random":
        pi_q = pi_q - mean(pi_q) + spec.target_b
    ell, pi_v = solve_constraint(v, q, pi_v, pi_q, rho, ell0, grid, tau, spectral=spec.spectral_ell)
    return FieldState(tau, v, q, rho, ell, pi_v, pi_q, twist=1)


def _near_attractor(spec: SamplerSpec, grid: PeriodicGrid) -> FieldState:
    """Rescale a random sample onto the attractor.

    With target C² = attractor_energy: ρ is set so Π = (2/√10 + c_target)·C·e^{τ/2}
    and the fluctuation scale is solved for e^τ H = C². The constant in l
    is then shifted so Y = Π e^{2τ}/2·(1 + ...) gives d = c_target/2.
    """
    base = spec.base_mode
    tau = spec.start_tau
    c2 = spec.attractor_energy
    h_target = c2 * math.exp(-tau)
    c_ratio = 2.0 / math.sqrt(10.0) + spec.attractor_c
    # with constant ρ: Π = e^{ρ0} and c = Π/(e^τ √H) - 2/√10
    pi_target = c_ratio * math.exp(tau) * math.sqrt(h_target)
    fields = _random_fields(spec, base, grid, tau, 0.0)
    rho_shift = math.log(pi_target / mean(np.exp(fields[4])))
    fields = fields[:4] + (fields[4] + rho_shift,)

    def mismatch(s):
        return energy_suite(_assemble(spec, base, grid, tau, fields, s, 0.0, _ELL_ATTRACTOR)).corrected_h - h_target

    lo = 0.0
    if mismatch(lo) >= 0.0:
        raise ConstraintError(
            f"target_b={spec.target_b} alone exceeds the attractor energy e^tau H = {c2}"
        )
    hi = 1.0
    while mismatch(hi) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise ConstraintError("could not bracket the attractor energy")
    s = brentq(mismatch, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200)
    state = _assemble(spec, base, grid, tau, fields, s, 0.0, _ELL_ATTRACTOR)
    es = energy_suite(state)
    # d + 1/√10 = Y/(e^{3τ}√H) and Y scales with e^{l}; aim at d = c/2
    d_ratio = 0.5 * c_ratio
    y_target = d_ratio * math.exp(3.0 * tau) * math.sqrt(es.corrected_h)
    shift = math.log(y_target / es.twist_y)
    return state.replace(ell=state.ell + shift)


def b_balance_offsets(target_b: float, tau0: float = 0.0, rho0: float = 0.0,
                      ell_mean: float = math.log(0.5)) -> tuple[float, float]:
    """(v_offset, v_tau_offset) placing homogeneous B≠0 data at its quasi-equilibrium.

    For θ-independent fields with π_Q = B the V equation reads
    V_ττ = -e^l V_τ + B² e^{-2ρ-2(V-τ)}. With V_τ = 1/2 the right-hand side
    vanishes when e^{-2ρ-2(V-τ)} B² = e^l/2, which fixes V at τ0.
    """
    if target_b == 0.0:
        raise UsageError("the balance point needs target_b != 0")
    v_tau = 0.5
    v = tau0 - rho0 - 0.5 * (ell_mean + math.log(v_tau) - 2.0 * math.log(abs(target_b)))
    return v, v_tau


def make_initial_data(spec: SamplerSpec, grid: PeriodicGrid) -> FieldState:
    tau = spec.start_tau
    n = grid.n_points
    if spec.mode in ("polarised_random", "b0_random", "generic_random"):
        sample_fourier(spec.seed, spec.m_max, 0.0, grid)  # validates m_max against N
    if spec.mode == "kasner":
        a, b, c = spec.kasner_a, spec.kasner_b, spec.kasner_c
        const = np.ones(n)
        return FieldState(
            tau,
            (a * tau + b) * const,
            0.0 * const,
            spec.rho0 * const,
            ((0.5 * a * a - 2.0) * tau + c) * const,
            math.exp(spec.rho0) * a * const,
            0.0 * const,
            twist=0,
        )
    if spec.mode == "pseudo_homogeneous":
        const = np.ones(n)
        v = spec.kasner_b * const
        q = 0.0 * const
        rho = spec.rho0 * const
        pi_v = math.exp(spec.rho0) * spec.kasner_a * const
        pi_q = spec.target_b * const
        ell, pi_v = solve_constraint(v, q, pi_v, pi_q, rho, spec.ell_mean, grid, tau)
        return FieldState(tau, v, q, rho, ell, pi_v, pi_q, twist=1)
    if spec.mode == "near_attractor":
        return _near_attractor(spec, grid)
    fields = _random_fields(spec, spec.mode, grid, tau, spec.rho0)
    return _assemble(spec, spec.mode, grid, tau, fields, 1.0, spec.ell_mean, spec.ell_mean)


class Condition(NamedTuple):
    name: str
    ok: bool | None
    value: float
    bound: str


@dataclass(frozen=True)
class SmallnessReport:
    """Smallness conditions of the bootstrap argument evaluated on one slice.

    ``ok`` is None for conditions that cannot be evaluated (H <= 0).
    """

    conditions: tuple[Condition, ...]
    eps: float
    m_cap: float
    c1: float
    s0: float

    def __getitem__(self, name: str) -> Condition:
        for cond in self.conditions:
            if cond.name == name:
                return cond
        raise KeyError(name)

    @property
    def all_ok(self) -> bool:
        return all(c.ok is True for c in self.conditions)

    def state_dependent_ok(self) -> bool:
        return all(c.ok is True for c in self.conditions if c.name != "s0_window")


def check_smallness(state: FieldState, eps: float = 0.1, m_cap: float = 10.0, c1: float = 1.0) -> SmallnessReport:
    s0 = state.tau
    a_const, _ = conserved_ab(state)
    es = energy_suite(state)
    rho0 = float(np.min(state.rho))
    es0 = math.exp(s0)
    eh = es0 * es.corrected_h
    root_eps = math.sqrt(eps)
    h_ok = es.corrected_h > 0.0
    ratio = es.volume * es.energy / es.corrected_h - 1.0 if es.corrected_h != 0.0 else math.nan

    def guarded(value, test):
        return (bool(test(value)) if h_ok and math.isfinite(value) else None), value

    conds = [
        Condition("abs_A", abs(a_const) < 1.0, abs(a_const), "< 1"),
        Condition("rho0_positive", rho0 > 0.0, rho0, "> 0"),
        Condition("abs_c", *guarded(abs(es.c_var), lambda x: x < eps), f"< {eps}"),
        Condition("abs_d", *guarded(abs(es.d_var), lambda x: x < eps), f"< {eps}"),
        Condition("energy_ratio", *guarded(abs(ratio), lambda x: x < 1.0), "< 1"),
        Condition("s0_window", 0.5 / eps < es0 < 2.0 / eps, es0, f"in ({0.5 / eps:g}, {2.0 / eps:g})"),
        Condition("h_upper", eh + c1 * root_eps < m_cap * eps * es0, eh + c1 * root_eps, f"< {m_cap * eps * es0:g}"),
        Condition("h_lower", 1.0 / m_cap < eh - c1 * root_eps, eh - c1 * root_eps, f"> {1.0 / m_cap:g}"),
    ]
    return SmallnessReport(tuple(conds), eps, m_cap, c1, s0)
