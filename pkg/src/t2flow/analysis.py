"""Fits of limits, rates, periods and convergence orders from diagnostic series.

Every fitter takes a sample abscissa ``taus`` and values, plus an optional
``window=(lo, hi)``. The default window is the last half of the run with
the final 2% dropped. Fits are done in the shifted variable τ - lo so
that adding a constant to the abscissa leaves slopes, limits and periods
unchanged.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .fields import FieldState, mean

MIN_SAMPLES = 8


class AnalysisError(ValueError):
    """A series does not meet the preconditions of a fit."""


@dataclass(frozen=True)
class RateFit:
    """Result of one fit.

    ``exponent`` is a log-slope, a decay rate, or C_V for :func:`fit_cv`.
    ``amplitude`` is referred to τ = 0. ``converged`` is False when a
    nonlinear fit fell back to the tail mean.
    """

    exponent: float
    amplitude: float
    limit: float
    window: tuple[float, float]
    residual_rms: float
    converged: bool = True

    def __post_init__(self):
        lo, hi = self.window
        if not hi > lo:
            raise AnalysisError(f"empty fit window {self.window}")
        if self.residual_rms < 0.0:
            raise AnalysisError("residual_rms must be non-negative")

    def report(self) -> str:
        lines = [
            f"exponent      {self.exponent:.10g}",
            f"amplitude     {self.amplitude:.10g}",
            f"limit         {self.limit:.10g}",
            f"window        {self.window[0]:.6g} {self.window[1]:.6g}",
            f"residual_rms  {self.residual_rms:.6g}",
            f"converged     {str(self.converged).lower()}",
        ]
        return "\n".join(lines)


def default_window(taus) -> tuple[float, float]:
    """Last half of the sampled range, excluding its final 2%."""
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size < 2:
        raise AnalysisError("need at least two samples to form a window")
    t0, t1 = float(taus[0]), float(taus[-1])
    span = t1 - t0
    return t0 + 0.5 * span, t1 - 0.02 * span


def _select(taus, values, window, min_samples=MIN_SAMPLES):
    taus = np.asarray(taus, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if taus.shape != values.shape or taus.ndim != 1:
        raise AnalysisError(f"taus {taus.shape} and values {values.shape} must be matching 1-d arrays")
    if np.any(np.diff(taus) <= 0.0):
        raise AnalysisError("taus must be strictly increasing")
    lo, hi = default_window(taus) if window is None else (float(window[0]), float(window[1]))
    if not hi > lo:
        raise AnalysisError(f"empty fit window ({lo}, {hi})")
    span = max(abs(lo), abs(hi), 1.0)
    keep = (taus >= lo - 1e-12 * span) & (taus <= hi + 1e-12 * span)
    if np.count_nonzero(keep) < min_samples:
        raise AnalysisError(f"{np.count_nonzero(keep)} samples in window ({lo:.6g}, {hi:.6g}); need {min_samples}")
    t, v = taus[keep], values[keep]
    if not np.all(np.isfinite(v)):
        raise AnalysisError("non-finite values in fit window")
    return t, v, (lo, hi)


def _rms(r) -> float:
    return float(np.sqrt(np.mean(np.square(r))))


def fit_log_slope(taus, values, window=None) -> RateFit:
    """Least-squares line through (τ, log value); the slope is the exponent."""
    t, v, win = _select(taus, values, window)
    if np.any(v <= 0.0):
        raise AnalysisError("fit_log_slope needs strictly positive values (take absolute values first)")
    x = t - win[0]
    logv = np.log(v)
    slope, intercept = np.polyfit(x, logv, 1)
    resid = logv - (slope * x + intercept)
    amplitude = math.exp(intercept - slope * win[0])
    return RateFit(float(slope), amplitude, 0.0, win, _rms(resid))


def _decay_model(x, limit, amp, rate):
    return limit + amp * np.exp(-rate * x)


def estimate_limit(taus, values, window=None, rate_guess: float = 0.25) -> RateFit:
    """Fit value ≈ L + A e^{-kτ} by nonlinear least squares; L is the limit.

    The fit is seeded with L = tail mean and k = ``rate_guess``. When it
    does not converge, or returns a non-decaying or non-finite model,
    the tail mean (last quarter of the window) is returned with
    ``converged`` False.
    """
    t, v, win = _select(taus, values, window)
    x = t - win[0]
    tail = v[x >= 0.75 * (x[-1] - x[0]) + x[0]]
    tail_mean = float(np.mean(tail))
    scale = float(np.max(np.abs(v))) or 1.0
    if float(np.ptp(v)) <= 1e-14 * scale:
        return RateFit(0.0, 0.0, tail_mean, win, _rms(v - tail_mean))
    p0 = (tail_mean, float(v[0] - tail_mean), rate_guess)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                _decay_model, x, v, p0=p0,
                bounds=([-np.inf, -np.inf, 1e-3], [np.inf, np.inf, 5.0]), maxfev=20000,
            )
    except (RuntimeError, ValueError):
        popt = None
    ok = popt is not None and bool(np.all(np.isfinite(popt)))
    if ok:
        limit, amp, rate = (float(p) for p in popt)
        # a limit far outside the sampled range is an extrapolation artefact
        ok = abs(limit - tail_mean) <= 10.0 * float(np.ptp(v)) + 1e-12 * scale
    if not ok:
        return RateFit(0.0, 0.0, tail_mean, win, _rms(v - tail_mean), converged=False)
    resid = v - _decay_model(x, limit, amp, rate)
    return RateFit(-rate, amp * math.exp(rate * win[0]), limit, win, _rms(resid))


def fit_cv(taus, v_mean, window=None) -> RateFit:
    """Linear fit ⟨V⟩ ≈ C_V τ + a; ``exponent`` carries C_V and ``limit`` carries a."""
    t, v, win = _select(taus, v_mean, window)
    x = t - win[0]
    slope, intercept = np.polyfit(x, v, 1)
    resid = v - (slope * x + intercept)
    offset = float(intercept - slope * win[0])
    return RateFit(float(slope), offset, offset, win, _rms(resid))


def _moving_mean(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving mean; NaN where the window does not fit."""
    out = np.full(x.shape, np.nan)
    half = width // 2
    if 2 * half + 1 > x.size:
        return out
    kernel = np.ones(2 * half + 1) / (2 * half + 1)
    out[half : x.size - half] = np.convolve(x, kernel, mode="valid")
    return out


def _crossings(t: np.ndarray, x: np.ndarray, floor: float, ratio: float = 0.1) -> np.ndarray:
    """Interpolated zero crossings with lobe-relative hysteresis.

    A sign change counts only once the new lobe exceeds ``ratio`` times
    the peak of the previous lobe (and ``floor``), so jitter near zero is
    ignored while decaying oscillations keep all their crossings.
    """
    found = []
    sign = 0
    peak = 0.0
    last_same = -1
    for k in range(x.size):
        a = abs(x[k])
        s = 1 if x[k] > 0.0 else -1
        if sign == 0:
            if a > floor:
                sign, peak, last_same = s, a, k
            continue
        if s == sign:
            peak = max(peak, a)
            last_same = k
        elif a > max(ratio * peak, floor):
            j = last_same + 1
            t0, t1, x0, x1 = t[j - 1], t[j], x[j - 1], x[j]
            found.append(t0 - x0 * (t1 - t0) / (x1 - x0))
            sign, peak, last_same = s, a, k
    return np.asarray(found)


def _period_from(t, resid, min_crossings):
    scale = float(np.max(np.abs(resid)))
    if not scale > 0.0:
        raise AnalysisError("series has no oscillation about its trend")
    cross = _crossings(t, resid, 1e-9 * scale)
    if cross.size < min_crossings:
        raise AnalysisError(f"only {cross.size} trend crossings in window; need {min_crossings}")
    return 2.0 * (cross[-1] - cross[0]) / (cross.size - 1)


def oscillation_period(taus, values, window=None, trend_width: float | None = None,
                       min_crossings: int = 4) -> float:
    """Period from the mean spacing of zero crossings of the series about its moving-mean trend.

    Without ``trend_width`` a first estimate is taken about a cubic
    trend and then refined with a moving mean one period wide.
    """
    t, v, win = _select(taus, values, window)
    scale = float(np.max(np.abs(v))) or 1.0
    x = (t - win[0]) / (win[1] - win[0])
    line = np.polyval(np.polyfit(x, v, 3), x)
    if float(np.max(np.abs(v - line))) <= 1e-9 * scale:
        raise AnalysisError("series has no oscillation about its trend")
    dt = float(np.median(np.diff(t)))
    if trend_width is None:
        trend_width = _period_from(t, v - line, min_crossings)
    width = max(3, int(round(trend_width / dt)))
    trend = _moving_mean(v, width)
    ok = np.isfinite(trend)
    if np.count_nonzero(ok) < MIN_SAMPLES:
        raise AnalysisError("window too short for the moving-mean trend")
    resid = v[ok] - trend[ok]
    if float(np.max(np.abs(resid))) <= 1e-9 * scale:
        raise AnalysisError("series has no oscillation about its trend")
    return float(_period_from(t[ok], resid, min_crossings))


def turning_points(taus, values, window=None, min_swing: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Confirmed local extrema (τ_k, value_k) of a series, alternating max and min.

    An extremum is confirmed once the series has moved away from it by more
    than a threshold: ``min_swing`` times the series' range until the first
    extremum, then ``min_swing`` times the previous swing, so ripples are
    ignored while decaying oscillations are followed. The window edges are
    never reported as extrema.
    """
    t, v, _ = _select(taus, values, window)
    span = float(np.ptp(v))
    thr = min_swing * span
    if not thr > 0.0:
        return np.empty(0), np.empty(0)
    ts, vs = [], []

    def confirm(k):
        nonlocal thr
        if k > 0:
            if vs:
                thr = max(min_swing * abs(v[k] - vs[-1]), 1e-12 * span)
            ts.append(t[k])
            vs.append(v[k])

    direction = 0
    cand = 0
    for k in range(1, v.size):
        if direction >= 0 and v[k] >= v[cand] and (direction == 1 or v[k] > v[0]):
            direction, cand = 1, k
        elif direction <= 0 and v[k] <= v[cand] and (direction == -1 or v[k] < v[0]):
            direction, cand = -1, k
        elif direction == 1 and v[cand] - v[k] > thr:
            confirm(cand)
            direction, cand = -1, k
        elif direction == -1 and v[k] - v[cand] > thr:
            confirm(cand)
            direction, cand = 1, k
    return np.asarray(ts), np.asarray(vs)


def oscillation_swings(taus, values, window=None, min_swing: float = 0.02) -> np.ndarray:
    """Absolute changes between consecutive confirmed extrema (half-period peak-to-trough swings).

    Comparing the last swing with the first tells whether an oscillation
    decays.
    """
    _, ext = turning_points(taus, values, window, min_swing)
    if ext.size < 2:
        raise AnalysisError(f"only {ext.size} turning points in window; need 2")
    return np.abs(np.diff(ext))


def range_ratio(taus, values, window=None) -> float:
    """Peak-to-trough range over the second half of the window divided by that over the first half.

    Near 1 for an oscillation whose amplitude does not decay; e^{-kL/2}
    for one decaying like e^{-kτ} over a window of length L.
    """
    t, v, (lo, hi) = _select(taus, values, window)
    mid = 0.5 * (lo + hi)
    first, last = v[t <= mid], v[t >= mid]
    if first.size < 2 or last.size < 2:
        raise AnalysisError("each half of the window needs two samples")
    base = float(np.ptp(first))
    if not base > 0.0:
        raise AnalysisError("series is constant over the first half of the window")
    return float(np.ptp(last)) / base


def _inject(u: np.ndarray, n: int) -> np.ndarray:
    if u.size % n:
        raise AnalysisError(f"cannot inject {u.size} points onto {n}")
    return u[:: u.size // n]


def convergence_order(coarse, medium, fine, rel_floor: float = 1e-12) -> float:
    """Observed order log2(|u_N - u_2N| / |u_2N - u_4N|) in discrete L².

    Arrays of sizes N, 2N, 4N are compared at the coarse points; equal
    sizes are compared directly (scalars are allowed). Returns NaN when
    the finer difference sits at round-off, which is the expected outcome
    for exactly represented solutions.
    """
    u1, u2, u4 = (np.atleast_1d(np.asarray(u, dtype=np.float64)) for u in (coarse, medium, fine))
    n = u1.size
    if not (u2.size in (n, 2 * n) and u4.size in (n, 4 * n) and (u2.size == n) == (u4.size == n)):
        raise AnalysisError(f"misaligned series of sizes {u1.size}, {u2.size}, {u4.size}")
    u2c, u4c = _inject(u2, n), _inject(u4, n)
    d12 = math.sqrt(float(np.mean((u1 - u2c) ** 2)))
    d24 = math.sqrt(float(np.mean((u2c - u4c) ** 2)))
    size = max(float(np.max(np.abs(u4))), 1.0)
    if d24 <= rel_floor * size or d12 <= rel_floor * size:
        return math.nan
    return math.log2(d12 / d24)


def error_order(errors: Sequence[float], ratio: float = 2.0) -> np.ndarray:
    """Pairwise orders log(e_k / e_{k+1}) / log(ratio) for errors at successively refined grids."""
    e = np.abs(np.asarray(errors, dtype=np.float64))
    if e.size < 2:
        raise AnalysisError("need at least two error values")
    if np.any(e == 0.0):
        raise AnalysisError("zero error; order is undefined")
    return np.log(e[:-1] / e[1:]) / math.log(ratio)


def rho_profile_limit(states: Sequence[FieldState]) -> tuple[np.ndarray, RateFit]:
    """Last Π^{-1}e^ρ profile and the decay of successive max-norm differences.

    The rate fit uses every difference (the window spans all states).
    Identical consecutive profiles give zero differences and an
    exponent of -inf.
    """
    if len(states) < 3:
        raise AnalysisError(f"need at least 3 states, got {len(states)}")
    taus = np.array([s.tau for s in states])
    if np.any(np.diff(taus) < 0.0):
        raise AnalysisError("states must be ordered by tau")
    profiles = [np.exp(s.rho) / mean(np.exp(s.rho)) for s in states]
    diffs = np.array([np.max(np.abs(b - a)) for a, b in zip(profiles[:-1], profiles[1:])])
    mids = 0.5 * (taus[:-1] + taus[1:])
    win = (float(mids[0]), float(mids[-1])) if mids[-1] > mids[0] else (float(mids[0]), float(mids[0]) + 1.0)
    positive = diffs > 0.0
    if np.count_nonzero(positive) < 2 or mids[-1] <= mids[0]:
        return profiles[-1], RateFit(-math.inf, 0.0, 0.0, win, 0.0)
    x = mids[positive] - win[0]
    logd = np.log(diffs[positive])
    slope, intercept = np.polyfit(x, logd, 1)
    resid = logd - (slope * x + intercept)
    return profiles[-1], RateFit(float(slope), math.exp(intercept - slope * win[0]), 0.0, win, _rms(resid))
