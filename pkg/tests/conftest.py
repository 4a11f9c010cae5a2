import math

import numpy as np
import pytest

from t2flow.fields import FieldState, PeriodicGrid


def smooth_profile(rng, n, modes=4, amplitude=0.3):
    """Random trigonometric polynomial on n points, built without the package's sampler."""
    theta = np.arange(n) / n
    out = np.zeros(n)
    for m in range(1, modes + 1):
        a, b = rng.normal(size=2) * amplitude / m
        out += a * np.cos(2 * np.pi * m * theta) + b * np.sin(2 * np.pi * m * theta)
    return out


def random_state(rng, n=64, twist=1, tau=None, homogeneous=False):
    """A state with O(1) smooth random fields; constraints are not imposed."""
    if tau is None:
        tau = float(rng.uniform(0.0, 1.0))
    if homogeneous:
        vals = rng.normal(size=6) * 0.5
        fields = [np.full(n, x) for x in vals]
    else:
        fields = [rng.normal() * 0.5 + smooth_profile(rng, n) for _ in range(6)]
    v, q, rho, ell, pi_v, pi_q = fields
    return FieldState(tau, v, q, rho, ell, pi_v, pi_q, twist=twist)


def kasner_state(a=1.0, b=0.0, c=0.0, rho0=0.0, tau=0.0, n=64):
    const = np.ones(n)
    return FieldState(
        tau,
        (a * tau + b) * const,
        0.0 * const,
        rho0 * const,
        ((0.5 * a * a - 2.0) * tau + c) * const,
        math.exp(rho0) * a * const,
        0.0 * const,
        twist=0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid64():
    return PeriodicGrid(64)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
