"""Periodic grid, discrete θ-operators and the PDE state container.

θ lives on [0, 1) with unit total measure, so every integral over the
circle is a plain mean over grid points.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class UsageError(ValueError):
    """Raised when an operator is called with inconsistent inputs."""


@dataclass(frozen=True)
class PeriodicGrid:
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if not isinstance(n, (int, np.integer)) or n < 16 or n % 2:
            raise UsageError(f"grid size must be an even integer >= 16, got {n!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_points

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_points


def deriv_theta(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Fourth-order centered periodic derivative.

    (f[j-2] - 8 f[j-1] + 8 f[j+1] - f[j+2]) / (12 h), indices mod N.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != grid.n_points:
        raise UsageError(f"array of length {f.shape} does not match grid size {grid.n_points}")
    # grouped as differences so a constant gives exactly zero
    return (8.0 * (np.roll(f, -1) - np.roll(f, 1)) - (np.roll(f, -2) - np.roll(f, 2))) / (12.0 * grid.spacing)


def mean(f: np.ndarray) -> float:
    """Discrete ⟨f⟩ = (1/N) Σ f_j."""
    f = np.asarray(f, dtype=np.float64)
    if f.size == 0:
        raise UsageError("mean of an empty array")
    return float(np.sum(f) / f.size)


def weighted_mean(f: np.ndarray, w: np.ndarray) -> float:
    """⟨f·w⟩, not normalised by ⟨w⟩."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if f.shape != w.shape:
        raise UsageError(f"length mismatch: {f.shape} vs {w.shape}")
    return mean(f * w)


def spectral_filter(f: np.ndarray) -> np.ndarray:
    """Zero the top third of Fourier modes (2/3 rule); the mean is untouched."""
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    fh = np.fft.rfft(f)
    fh[n // 3 + 1 :] = 0.0
    return np.fft.irfft(fh, n)


FIELD_NAMES = ("v", "q", "rho", "ell", "pi_v", "pi_q")


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FieldState:
    """Full state of the 1+1 system at areal time ``tau``.

    ``pi_v = e^ρ V_τ`` and ``pi_q = e^{ρ+2(V-τ)} Q_τ`` are the evolved
    momenta. ``twist`` is 1 for non-Gowdy runs (ρ_τ = e^l) and 0 for
    Gowdy/Kasner reference runs.
    """

    tau: float
    v: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    ell: np.ndarray
    pi_v: np.ndarray
    pi_q: np.ndarray
    twist: int = 1
    grid: PeriodicGrid = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = {name: _frozen(getattr(self, name)) for name in FIELD_NAMES}
        n = arrays["v"].shape[0] if arrays["v"].ndim == 1 else -1
        for name, a in arrays.items():
            if a.ndim != 1 or a.shape[0] != n:
                raise UsageError(f"field {name} has shape {a.shape}, expected ({n},)")
            if not np.all(np.isfinite(a)):
                raise UsageError(f"field {name} has non-finite entries")
            object.__setattr__(self, name, a)
        if self.twist not in (0, 1):
            raise UsageError(f"twist flag must be 0 or 1, got {self.twist!r}")
        if not np.isfinite(self.tau):
            raise UsageError("tau must be finite")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "twist", int(self.twist))
        object.__setattr__(self, "grid", PeriodicGrid(n))

    @property
    def v_tau(self) -> np.ndarray:
        return self.pi_v * np.exp(-self.rho)

    @property
    def q_tau(self) -> np.ndarray:
        return self.pi_q * np.exp(-self.rho - 2.0 * (self.v - self.tau))

    def stacked(self) -> np.ndarray:
        """Copy of the six fields as a (6, N) array in FIELD_NAMES order."""
        return np.stack([getattr(self, name) for name in FIELD_NAMES])

    @classmethod
    def from_stacked(cls, tau: float, y: np.ndarray, twist: int) -> "FieldState":
        return cls(tau, *(y[i] for i in range(6)), twist=twist)

    def replace(self, **changes) -> "FieldState":
        return replace(self, **changes)

    def filtered(self) -> "FieldState":
        return self.replace(**{name: spectral_filter(getattr(self, name)) for name in FIELD_NAMES})
