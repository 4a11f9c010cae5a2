"""Single runs, per-run summaries and the parallel batch driver."""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analysis import AnalysisError, default_window, estimate_limit, fit_cv, fit_log_slope, range_ratio
from .diagnostics import DiagnosticsRecord
from .evolution import EvolutionConfig, EvolutionError, evolve
from .fields import FieldState, PeriodicGrid, UsageError
from .initial_data import SamplerSpec, make_initial_data
from .io import RunManifest, checkpoint_bytes
from .reference_models import sink_norm

BATCH_CLASSES = ("polarised", "b0", "generic")

# acceptance thresholds applied to every batch member
CV_ZERO_TOL = 0.05
CV_HALF_RANGE = (0.4, 0.6)
LIMIT_RTOL = 0.10
CD_SLOPE_MAX = -0.15
W_SLOPE_MAX = -0.1
AMP_RATIO_MIN = 0.5


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    state: FieldState
    manifest: RunManifest
    error: str | None = None


def manifest_for(spec: SamplerSpec | dict, n: int, initial: FieldState, config: EvolutionConfig,
                 tau_end: float) -> RunManifest:
    """Manifest of a run; ``spec`` may be a SamplerSpec or its echo (empty when unknown, seed then -1)."""
    echo = spec.as_dict() if isinstance(spec, SamplerSpec) else dict(spec)
    return RunManifest(
        spec=echo,
        grid_n=n,
        code_version=__version__,
        seed=int(echo.get("seed", -1)),
        initial_checksum=hashlib.sha256(checkpoint_bytes(initial)).hexdigest(),
        evolution={
            "cfl_lambda": config.cfl_lambda,
            "output_interval": config.output_interval,
            "max_steps": config.max_steps,
            "filter_enabled": config.filter_enabled,
        },
        tau_start=initial.tau,
        tau_end=tau_end,
    )


def run(spec: SamplerSpec, n: int, tau_end: float, config: EvolutionConfig | None = None,
        on_record=None, raise_errors: bool = True) -> RunResult:
    """Generate initial data for ``spec`` on N points and evolve to ``tau_end``.

    With ``raise_errors`` False an EvolutionError is captured in
    ``RunResult.error`` alongside the partial records.
    """
    config = config or EvolutionConfig()
    state = make_initial_data(spec, PeriodicGrid(n))
    manifest = manifest_for(spec, n, state, config, tau_end)
    records: list[DiagnosticsRecord] = []

    def collect(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    try:
        final = evolve(state, tau_end, config, collect)
    except EvolutionError as exc:
        if raise_errors:
            raise
        manifest.tau_finished = exc.tau
        return RunResult(records, exc.state, manifest, str(exc))
    manifest.tau_finished = final.tau
    return RunResult(records, final, manifest)


def config_from_manifest(manifest: RunManifest) -> tuple[SamplerSpec, EvolutionConfig]:
    try:
        spec = SamplerSpec(**manifest.spec)
        config = EvolutionConfig(**manifest.evolution)
    except TypeError as exc:
        raise UsageError(f"manifest fields do not match this build: {exc}") from exc
    return spec, config


def columns(records) -> dict[str, np.ndarray]:
    """Record attributes as arrays keyed by attribute name."""
    if not records:
        return {}
    names = records[0].as_dict().keys()
    return {k: np.array([getattr(r, k) for r in records], dtype=np.float64) for k in names}


def batch_spec(cls: str, seed: int, target_b: float = 0.3) -> SamplerSpec:
    """Sampler recipe for one member of a batch class.

    Every class starts in near_attractor mode with c = 0.08 off the fixed
    point so the spiral is visible. generic has B = ``target_b`` and starts
    at the B ≠ 0 balance point (V_τ = 1/2), so its transient does not
    swamp the C_V fit.
    """
    if cls == "polarised":
        return SamplerSpec(mode="near_attractor", seed=seed, attractor_base="polarised_random", attractor_c=0.08)
    if cls == "b0":
        return SamplerSpec(mode="near_attractor", seed=seed, attractor_base="b0_random", attractor_c=0.08)
    if cls == "generic":
        return SamplerSpec(mode="near_attractor", seed=seed, attractor_base="generic_random",
                           target_b=target_b, b_balance=True, attractor_c=0.08)
    raise UsageError(f"unknown batch class {cls!r}; expected one of {BATCH_CLASSES}")


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except AnalysisError:
        return None


def summarize(records, b_nonzero: bool) -> dict:
    """Fitted asymptotics of one run and pass/fail against the batch thresholds.

    Fits use the default window (last half, final 2% dropped). Failed
    fits give NaN entries and a failing verdict.
    """
    col = columns(records)
    tau = col["tau"]
    out: dict = {}
    cv = _safe(fit_cv, tau, col["v_mean"])
    out["C_V"] = cv.exponent if cv else math.nan
    eh = np.exp(tau) * col["corrected_h"]
    h_lim = _safe(estimate_limit, tau, eh)
    pi_lim = _safe(estimate_limit, tau, col["volume"] * np.exp(-0.5 * tau))
    e_lim = _safe(estimate_limit, tau, col["energy"] * np.exp(1.5 * tau))
    el_lim = _safe(estimate_limit, tau, col["el_wmean"])
    j_lim = _safe(estimate_limit, tau, col["j_wmean"])
    out["C_inf_H"] = math.sqrt(h_lim.limit) if h_lim and h_lim.limit > 0 else math.nan
    out["C_inf_Pi"] = pi_lim.limit * math.sqrt(10.0) / 2.0 if pi_lim else math.nan
    out["C_inf_E"] = e_lim.limit * 2.0 / math.sqrt(10.0) if e_lim else math.nan
    out["el_limit"] = el_lim.limit if el_lim else math.nan
    out["j_limit"] = j_lim.limit if j_lim else math.nan
    quarter = tau >= tau[0] + 0.75 * (tau[-1] - tau[0])
    out["eH_variation"] = float(np.ptp(eh[quarter]) / np.mean(eh[quarter]))
    cd = sink_norm(col["c_var"], col["d_var"])
    slope = _safe(fit_log_slope, tau, cd) if np.all(np.isfinite(cd)) else None
    out["cd_slope"] = slope.exponent if slope else math.nan
    w = col["w_diag"]
    w_fit = _safe(fit_cv, tau[np.isfinite(w)], w[np.isfinite(w)], default_window(tau))
    out["W_slope"] = w_fit.exponent if w_fit else math.nan
    ratio = ev_eq_amplitude_ratio(tau, col["ev_diag"], col["eq_diag"])
    out["EV_EQ_amp_ratio"] = ratio

    checks = {}
    if b_nonzero:
        checks["C_V"] = CV_HALF_RANGE[0] <= out["C_V"] <= CV_HALF_RANGE[1]
        checks["EV_EQ_amp_ratio"] = ratio > AMP_RATIO_MIN
    else:
        checks["C_V"] = abs(out["C_V"]) <= CV_ZERO_TOL
        checks["W_slope"] = out["W_slope"] < W_SLOPE_MAX
        checks["eH_variation"] = out["eH_variation"] < LIMIT_RTOL
        checks["el_limit"] = abs(out["el_limit"] - 0.5) <= LIMIT_RTOL * 0.5
        checks["j_limit"] = abs(out["j_limit"] - 2.5) <= LIMIT_RTOL * 2.5
        checks["cd_slope"] = out["cd_slope"] <= CD_SLOPE_MAX
        cs = [out["C_inf_H"], out["C_inf_Pi"], out["C_inf_E"]]
        checks["C_inf_consistency"] = all(math.isfinite(x) for x in cs) and (max(cs) - min(cs)) <= LIMIT_RTOL * min(cs)
    out["checks"] = {k: bool(v) for k, v in checks.items()}
    out["passed"] = all(out["checks"].values())
    return out


def ev_eq_amplitude_ratio(tau, ev, eq) -> float:
    """Smaller of the last-half/first-half range ratios of E_V and E_Q over the whole run."""
    ratios = [_safe(range_ratio, tau, np.asarray(x), (tau[0], tau[-1])) for x in (ev, eq)]
    if any(r is None for r in ratios):
        return math.nan
    return min(ratios)


def _batch_member(args):
    cls, seed, n, tau_end, config = args
    spec = batch_spec(cls, seed)
    try:
        result = run(spec, n, tau_end, config, raise_errors=False)
    except Exception as exc:  # recorded in the summary, never fatal to the batch
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}", "passed": False}
    row = {"seed": seed, "error": result.error}
    if result.error is None:
        try:
            row.update(summarize(result.records, spec.target_b != 0.0))
        except Exception as exc:
            row.update(error=f"{type(exc).__name__}: {exc}", passed=False)
    else:
        row["passed"] = False
    return row


def worker_cap(requested: int) -> int:
    """Worker count limited by the T2FLOW_THREADS environment variable."""
    env = os.environ.get("T2FLOW_THREADS")
    cap = requested
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError as exc:
            raise UsageError(f"T2FLOW_THREADS must be an integer, got {env!r}") from exc
    return max(1, cap)


def run_batch(cls: str, count: int, seed: int = 0, workers: int = 1, n: int = 256,
              tau_end: float = 10.0, config: EvolutionConfig | None = None) -> list[dict]:
    """Run ``count`` seeds (seed + index) of a class; one summary row per seed, in seed order."""
    if cls not in BATCH_CLASSES:
        raise UsageError(f"unknown batch class {cls!r}; expected one of {BATCH_CLASSES}")
    if count < 1:
        raise UsageError("count must be positive")
    config = config or EvolutionConfig(filter_enabled=True)
    jobs = [(cls, seed + i, n, tau_end, config) for i in range(count)]
    workers = worker_cap(workers)
    if workers == 1:
        return [_batch_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_batch_member, jobs))


@dataclass
class ConvergenceReport:
    resolutions: tuple[int, int, int]
    tau_end: float
    field_orders: dict[str, float]
    a_drifts: tuple[float, float, float]
    a_orders: tuple[float, float]


def self_convergence(spec: SamplerSpec, n: int, tau_end: float, config: EvolutionConfig | None = None) -> ConvergenceReport:
    """Evolve the same datum at N, 2N and 4N and measure observed orders.

    Field orders compare the three final states at the coarse points. The
    A drifts are |A(τ_end) - A(τ0)| at each resolution. The default
    config outputs only at ``tau_end``: intermediate output times would
    insert truncated steps that spoil the dt halving between levels.
    """
    from .analysis import convergence_order, error_order
    from .diagnostics import conserved_ab
    from .fields import FIELD_NAMES

    if config is None:
        config = EvolutionConfig(output_interval=tau_end - spec.start_tau)
    finals, drifts = [], []
    for k in (1, 2, 4):
        state = make_initial_data(spec, PeriodicGrid(n * k))
        a0, _ = conserved_ab(state)
        final = evolve(state, tau_end, config)
        finals.append(final)
        drifts.append(abs(conserved_ab(final)[0] - a0))
    orders = {
        name: convergence_order(*(getattr(f, name) for f in finals)) for name in FIELD_NAMES
    }
    try:
        a_orders = tuple(float(x) for x in error_order(drifts))
    except AnalysisError:
        a_orders = (math.nan, math.nan)
    return ConvergenceReport((n, 2 * n, 4 * n), tau_end, orders, tuple(drifts), a_orders)
