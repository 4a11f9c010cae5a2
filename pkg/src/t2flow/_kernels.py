"""Compiled inner loops for the method-of-lines solver.

The state is a (6, N) float64 array with rows V, Q, ρ, l, π_V, π_Q.
"""
import math

import numpy as np
from numba import njit

OK = 0
NONFINITE = 1
MAX_STEPS = 2


@njit(cache=True)
def _d4(f, inv12h, out):
    n = f.shape[0]
    for j in range(n):
        jm2 = j - 2 if j >= 2 else j - 2 + n
        jm1 = j - 1 if j >= 1 else j - 1 + n
        jp1 = j + 1 if j + 1 < n else j + 1 - n
        jp2 = j + 2 if j + 2 < n else j + 2 - n
        # grouped as differences so a constant gives exactly zero
        out[j] = (8.0 * (f[jp1] - f[jm1]) - (f[jp2] - f[jm2])) * inv12h


@njit(cache=True)
def rhs_into(tau, y, kappa, inv12h, dy, work):
    """Write the τ-derivative of ``y`` into ``dy``.

    ``work`` is scratch space of shape (4, N).
    """
    n = y.shape[1]
    v = y[0]
    q = y[1]
    rho = y[2]
    ell = y[3]
    pv = y[4]
    pq = y[5]
    vth = work[0]
    qth = work[1]
    flux_v = work[2]
    flux_q = work[3]
    _d4(v, inv12h, vth)
    _d4(q, inv12h, qth)
    for j in range(n):
        flux_v[j] = math.exp(2.0 * tau - rho[j]) * vth[j]
        flux_q[j] = math.exp(2.0 * v[j] - rho[j]) * qth[j]
    _d4(flux_v, inv12h, dy[4])
    _d4(flux_q, inv12h, dy[5])
    for j in range(n):
        vt = pv[j] * math.exp(-rho[j])
        qt = pq[j] * math.exp(-rho[j] - 2.0 * (v[j] - tau))
        # e^{2(V-τ)+ρ} Q_τ² = π_Q Q_τ and e^{2V-ρ} Q_θ² = flux_q Q_θ
        dy[4, j] += pq[j] * qt - flux_q[j] * qth[j]
        e2tr = math.exp(2.0 * (tau - rho[j]))
        e2vt = math.exp(2.0 * (v[j] - tau))
        jj = 0.5 * (vt * vt + e2tr * vth[j] * vth[j] + e2vt * (qt * qt + e2tr * qth[j] * qth[j]))
        drho = kappa * math.exp(ell[j])
        dy[0, j] = vt
        dy[1, j] = qt
        dy[2, j] = drho
        dy[3, j] = jj - drho - 2.0


@njit(cache=True)
def rk4_into(tau, y, dt, kappa, inv12h, out, k1, k2, k3, k4, tmp, work):
    rhs_into(tau, y, kappa, inv12h, k1, work)
    for i in range(6):
        for j in range(y.shape[1]):
            tmp[i, j] = y[i, j] + 0.5 * dt * k1[i, j]
    rhs_into(tau + 0.5 * dt, tmp, kappa, inv12h, k2, work)
    for i in range(6):
        for j in range(y.shape[1]):
            tmp[i, j] = y[i, j] + 0.5 * dt * k2[i, j]
    rhs_into(tau + 0.5 * dt, tmp, kappa, inv12h, k3, work)
    for i in range(6):
        for j in range(y.shape[1]):
            tmp[i, j] = y[i, j] + dt * k3[i, j]
    rhs_into(tau + dt, tmp, kappa, inv12h, k4, work)
    for i in range(6):
        for j in range(y.shape[1]):
            out[i, j] = y[i, j] + dt / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])


@njit(cache=True)
def cfl_dt(tau, rho, cfl, spacing):
    speed = 0.0
    for j in range(rho.shape[0]):
        s = math.exp(tau - rho[j])
        if s > speed:
            speed = s
    return cfl * spacing / speed


def filter_matrix(n):
    """Symmetric N×N matrix P with f @ P equal to the 2/3-rule spectral filter of f."""
    eye = np.eye(n)
    fh = np.fft.rfft(eye, axis=1)
    fh[:, n // 3 + 1 :] = 0.0
    return np.ascontiguousarray(np.fft.irfft(fh, n, axis=1))


NO_FILTER = np.zeros((0, 0))


@njit(cache=True)
def advance(y, tau, tau_target, kappa, spacing, cfl, max_steps, filt):
    """RK4-step ``y`` in place from ``tau`` to exactly ``tau_target``.

    ``filt`` is a filter matrix from ``filter_matrix`` applied after every
    step, or a 0×0 array for none.

    Returns (tau_reached, steps_taken, status, bad_row). On a non-finite
    step the state is left at the last finite one and ``bad_row`` names
    the first offending field row (-1 otherwise).
    """
    n = y.shape[1]
    inv12h = 1.0 / (12.0 * spacing)
    k1 = np.empty((6, n))
    k2 = np.empty((6, n))
    k3 = np.empty((6, n))
    k4 = np.empty((6, n))
    tmp = np.empty((6, n))
    out = np.empty((6, n))
    work = np.empty((4, n))
    steps = 0
    while tau < tau_target:
        if steps >= max_steps:
            return tau, steps, MAX_STEPS, -1
        dt = cfl_dt(tau, y[2], cfl, spacing)
        last = False
        if dt >= tau_target - tau:
            dt = tau_target - tau
            last = True
        rk4_into(tau, y, dt, kappa, inv12h, out, k1, k2, k3, k4, tmp, work)
        total = 0.0
        for i in range(6):
            for j in range(n):
                total += out[i, j]
        if not math.isfinite(total):
            for i in range(6):
                for j in range(n):
                    if not math.isfinite(out[i, j]):
                        return tau, steps, NONFINITE, i
            return tau, steps, NONFINITE, 0
        if filt.shape[0] > 0:
            y[:, :] = np.dot(out, filt)
        else:
            y[:, :] = out
        tau = tau_target if last else tau + dt
        steps += 1
    return tau, steps, OK, -1
