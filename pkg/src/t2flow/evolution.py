"""Method-of-lines evolution: right-hand side, CFL step size, RK4, driver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .diagnostics import DiagnosticsRecord, compute_record
from .fields import FIELD_NAMES, FieldState, UsageError, spectral_filter

# largest exponent allowed for e^{2(τ-ρ)} times the squared field scale
_RANGE_LIMIT = math.log(1e300)


class EvolutionError(RuntimeError):
    """The evolution could not continue.

    ``state`` and ``records`` hold everything computed before the failure
    (``partial`` is always True on this exception).
    """

    def __init__(self, message, tau, field=None, state=None, records=None):
        super().__init__(message)
        self.tau = tau
        self.field = field
        self.state = state
        self.records = list(records or [])
        self.partial = True


@dataclass(frozen=True)
class EvolutionConfig:
    cfl_lambda: float = 0.5
    output_interval: float = 0.1
    max_steps: int = 50_000_000
    filter_enabled: bool = False

    def __post_init__(self):
        if not 0.0 < self.cfl_lambda <= 1.0:
            raise UsageError(f"cfl_lambda must lie in (0, 1], got {self.cfl_lambda}")
        if not self.output_interval > 0.0:
            raise UsageError(f"output_interval must be positive, got {self.output_interval}")
        if self.max_steps < 1:
            raise UsageError("max_steps must be positive")


class StateDerivative(NamedTuple):
    d_v: np.ndarray
    d_q: np.ndarray
    d_rho: np.ndarray
    d_ell: np.ndarray
    d_pi_v: np.ndarray
    d_pi_q: np.ndarray


def _check_range(state: FieldState) -> None:
    scale = max(1.0, max(float(np.max(np.abs(getattr(state, n)))) for n in FIELD_NAMES))
    worst = 2.0 * (state.tau - float(np.min(state.rho)))
    if worst > _RANGE_LIMIT - 2.0 * math.log(scale):
        raise EvolutionError(
            f"e^(2(tau-rho)) out of range at tau={state.tau:.6g}", state.tau, field="rho", state=state
        )


def rhs(state: FieldState) -> StateDerivative:
    """τ-derivatives of (V, Q, ρ, l, π_V, π_Q).

    Flux terms are differentiated in conservative form, so Σ_j d_pi_q_j
    vanishes up to round-off. The momentum constraint is not used.
    """
    _check_range(state)
    y = state.stacked()
    dy = np.empty_like(y)
    work = np.empty((4, y.shape[1]))
    _kernels.rhs_into(state.tau, y, float(state.twist), 1.0 / (12.0 * state.grid.spacing), dy, work)
    for name, row in zip(FIELD_NAMES, dy):
        if not np.all(np.isfinite(row)):
            raise EvolutionError(
                f"non-finite d_{name} at tau={state.tau:.6g}", state.tau, field=name, state=state
            )
    return StateDerivative(*dy)


def cfl_dt(state: FieldState, cfl_lambda: float) -> float:
    """cfl_lambda * spacing / max_j e^{τ - ρ_j}."""
    return float(_kernels.cfl_dt(state.tau, state.rho, cfl_lambda, state.grid.spacing))


def step_rk4(state: FieldState, dt: float, filter_enabled: bool = False) -> FieldState:
    if not dt > 0.0:
        raise UsageError(f"dt must be positive, got {dt}")
    _check_range(state)
    y = state.stacked()
    n = y.shape[1]
    out = np.empty_like(y)
    scratch = [np.empty((6, n)) for _ in range(5)]
    _kernels.rk4_into(
        state.tau, y, dt, float(state.twist), 1.0 / (12.0 * state.grid.spacing), out, *scratch,
        np.empty((4, n)),
    )
    for name, row in zip(FIELD_NAMES, out):
        if not np.all(np.isfinite(row)):
            raise EvolutionError(
                f"non-finite {name} after step at tau={state.tau:.6g}", state.tau, field=name, state=state
            )
    if filter_enabled:
        out = np.stack([spectral_filter(row) for row in out])
    return FieldState.from_stacked(state.tau + dt, out, state.twist)


def output_times(tau0: float, tau_end: float, interval: float) -> list[float]:
    """τ0, τ0 + Δ, τ0 + 2Δ, ... and finally tau_end."""
    count = int(math.floor((tau_end - tau0) / interval + 1e-9))
    times = [tau0 + k * interval for k in range(count + 1)]
    if tau_end - times[-1] > 1e-9 * max(1.0, abs(tau_end)):
        times.append(tau_end)
    else:
        times[-1] = tau_end
    return times


def evolve(
    state: FieldState,
    tau_end: float,
    config: EvolutionConfig | None = None,
    on_record: Callable[[DiagnosticsRecord], None] | None = None,
    on_state: Callable[[FieldState], None] | None = None,
) -> FieldState:
    """Evolve to ``tau_end`` with RK4, reporting diagnostics every output interval.

    ``on_record`` is called on the initial slice and at each output time
    (the last one being ``tau_end``); ``on_state`` receives the state at
    the same times. Raises EvolutionError on range
    problems, non-finite fields or when ``config.max_steps`` is exceeded.
    """
    config = config or EvolutionConfig()
    if not tau_end > state.tau:
        raise UsageError(f"tau_end={tau_end} must exceed the state's tau={state.tau}")
    rho0_ref = float(np.min(state.rho))
    records: list[DiagnosticsRecord] = []

    def emit(s: FieldState) -> None:
        with np.errstate(over="ignore", invalid="ignore"):
            rec = compute_record(s, rho0_ref)
        if not all(math.isfinite(x) for x in (rec.energy, rec.volume, rec.corrected_h, rec.twist_y)):
            raise EvolutionError(
                f"diagnostics overflow at tau={s.tau:.6g} (max rho={np.max(s.rho):.4g}, max l={np.max(s.ell):.4g})",
                s.tau, field="rho", state=s, records=records,
            )
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if on_state is not None:
            on_state(s)

    emit(state)
    spacing = state.grid.spacing
    kappa = float(state.twist)
    y = state.stacked()
    tau = state.tau
    steps = 0
    filt = _kernels.filter_matrix(y.shape[1]) if config.filter_enabled else _kernels.NO_FILTER
    for target in output_times(state.tau, tau_end, config.output_interval)[1:]:
        _check_range(FieldState.from_stacked(tau, y, state.twist))
        tau, taken, status, bad_row = _kernels.advance(
            y, tau, target, kappa, spacing, config.cfl_lambda, config.max_steps - steps, filt
        )
        steps += taken
        if status == _kernels.NONFINITE:
            raise EvolutionError(
                f"non-finite field during step from tau={tau:.6g}", tau,
                field=FIELD_NAMES[bad_row], state=FieldState.from_stacked(tau, y, state.twist),
                records=records,
            )
        if status == _kernels.MAX_STEPS:
            raise EvolutionError(
                f"max_steps={config.max_steps} exceeded at tau={tau:.6g}", tau,
                state=FieldState.from_stacked(tau, y, state.twist), records=records,
            )
        emit(FieldState.from_stacked(tau, y, state.twist))
    return FieldState.from_stacked(tau, y, state.twist)
