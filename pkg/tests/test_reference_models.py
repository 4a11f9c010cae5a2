import math

import numpy as np
import pytest

from t2flow.evolution import EvolutionConfig, evolve
from t2flow.fields import PeriodicGrid
from t2flow.initial_data import SamplerSpec, make_initial_data
from t2flow.reference_models import (
    CD_FIXED_POINT,
    CD_LINEARIZATION,
    OracleError,
    PH_NAMES,
    cd_eigenvalues,
    cd_ode,
    cd_remainder,
    cd_rhs,
    kasner_exact,
    ph_ode,
    sink_norm,
)
from t2flow.analysis import fit_log_slope, oscillation_period

PERIOD = 8 * math.pi / math.sqrt(39)


class TestKasner:
    def test_example(self):
        k = kasner_exact(1.0, 0.0, 0.0, 2.0)
        assert k.v == 2.0 and k.ell_hat == -3.0 and k.q == 0.0

    def test_slopes(self):
        assert kasner_exact(2.0, 0.0, 0.0, 5.0).ell_hat == 0.0
        k0, k1 = kasner_exact(0.0, 0.4, 0.0, 0.0), kasner_exact(0.0, 0.4, 0.0, 1.0)
        assert k0.v == k1.v == 0.4
        assert k1.ell_hat - k0.ell_hat == -2.0

    def test_rho_constant(self):
        assert kasner_exact(1.0, 0.0, 0.0, 3.0, rho0=0.8).rho == 0.8


def homogeneous_initial(a=0.5, b=0.0, pi_q=0.0, rho0=0.0, ell=math.log(0.5)):
    return (b, a, 0.0, pi_q, rho0, ell)


class TestPhOde:
    def test_matches_polarised_pde(self):
        spec = SamplerSpec(mode="pseudo_homogeneous", kasner_a=0.7, kasner_b=0.1)
        s = make_initial_data(spec, PeriodicGrid(16))
        states = []
        evolve(s, 3.0, EvolutionConfig(output_interval=0.5), on_state=states.append)
        taus = np.array([x.tau for x in states])
        ref = ph_ode((s.v[0], s.v_tau[0], s.q[0], s.pi_q[0], s.rho[0], s.ell[0]), 3.0, tol=1e-12, t_eval=taus)
        for k, x in enumerate(states):
            for name in PH_NAMES:
                assert np.max(np.abs(getattr(x, name) - ref.column(name)[k])) < 1e-8

    def test_late_rate_in_kasner_range(self):
        for a, b in ((0.5, 0.0), (1.8, 0.0), (-1.0, 0.3), (0.0, 1.0)):
            ref = ph_ode(homogeneous_initial(a=a, pi_q=b), 30.0)
            assert -2.0 < ref.column("v_tau")[-1] < 2.0

    def test_q_constant_without_momentum(self):
        ref = ph_ode((0.2, 1.0, 0.7, 0.0, 0.0, -0.5), 5.0, t_eval=np.linspace(0, 5, 11))
        assert np.all(ref.column("q") == 0.7)
        assert np.all(ref.column("q_tau") == 0.0)

    def test_increasing_taus(self):
        ref = ph_ode(homogeneous_initial(), 4.0)
        assert np.all(np.diff(ref.taus) > 0) and np.all(np.isfinite(ref.values))

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            ph_ode(homogeneous_initial(), 1.0, tol=0.0)

    def test_oracle_error_on_blowup(self):
        # B² e^{-2ρ-2(V-τ)} overflows for very negative V
        with pytest.raises(OracleError) as info:
            ph_ode((-400.0, 0.0, 0.0, 1.0, 0.0, 0.0), 5.0)
        assert info.value.tau == 0.0


class TestCdOde:
    def test_fixed_point_is_stationary(self):
        c, d = CD_FIXED_POINT
        assert c == pytest.approx(0.6324555, abs=1e-7) and d == pytest.approx(0.3162278, abs=1e-7)
        assert np.allclose(cd_rhs(0.0, [c, d]), 0.0, atol=1e-15)
        traj = cd_ode(c, d, 50.0, t_eval=np.linspace(0, 50, 501))
        assert np.max(np.abs(traj.values - np.array(CD_FIXED_POINT))) < 1e-8

    def test_eigenvalues(self):
        ev = np.sort_complex(cd_eigenvalues())
        expected = np.array([-0.25 - 1j * math.sqrt(39) / 4, -0.25 + 1j * math.sqrt(39) / 4])
        np.testing.assert_allclose(ev, expected, atol=1e-14)
        # characteristic polynomial λ² + λ/2 + 5/2
        assert np.trace(CD_LINEARIZATION) == -0.5
        assert np.linalg.det(CD_LINEARIZATION) == pytest.approx(2.5, rel=1e-15)

    def test_linearisation_matches_jacobian(self):
        c, d = CD_FIXED_POINT
        h = 1e-6
        jac = np.empty((2, 2))
        for k, e in enumerate(np.eye(2)):
            jac[:, k] = (np.array(cd_rhs(0, [c + h * e[0], d + h * e[1]])) - np.array(cd_rhs(0, [c - h * e[0], d - h * e[1]]))) / (2 * h)
        np.testing.assert_allclose(jac, CD_LINEARIZATION, atol=1e-8)

    def test_perturbed_spiral(self):
        c, d = CD_FIXED_POINT
        taus = np.linspace(0, 40, 4001)
        traj = cd_ode(c + 1e-3, d, 40.0, t_eval=taus)
        dev = traj.values - np.array(CD_FIXED_POINT)
        period = oscillation_period(taus, dev[:, 0], window=(0.0, 40.0))
        assert period == pytest.approx(PERIOD, rel=0.02)
        slope = fit_log_slope(taus, sink_norm(dev[:, 0], dev[:, 1]), window=(0.0, 40.0)).exponent
        assert slope == pytest.approx(-0.25, rel=0.05)

    def test_sign_of_c_preserved(self):
        c, d = CD_FIXED_POINT
        for dc, dd in ((0.1, 0.0), (-0.1, 0.05), (0.0, -0.1)):
            traj = cd_ode(c + dc, d + dd, 30.0)
            assert np.all(traj.column("c") > 0)

    def test_singularity(self):
        with pytest.raises(OracleError) as info:
            cd_ode(0.05, -1.0, 10.0)
        assert info.value.tau is not None and info.value.tau > 0
        with pytest.raises(OracleError):
            cd_ode(0.0, 0.1, 1.0)


class TestRemainder:
    def test_vanishing_linear_part(self):
        assert cd_remainder(0.0, 0.0) == 0.0
        h = 1e-6
        gc = (cd_remainder(h, 0) - cd_remainder(-h, 0)) / (2 * h)
        gd = (cd_remainder(0, h) - cd_remainder(0, -h)) / (2 * h)
        assert abs(gc) < 1e-10 and abs(gd) < 1e-10

    def test_quadratic_scaling(self):
        r1, r2 = cd_remainder(1e-3, 2e-3), cd_remainder(2e-3, 4e-3)
        assert r2 / r1 == pytest.approx(4.0, rel=1e-2)


class TestSinkNorm:
    def test_linear_flow_decays_exactly(self):
        from scipy.linalg import expm

        x0 = np.array([0.3, -0.2])
        taus = np.linspace(0, 12, 50)
        pts = np.array([expm(CD_LINEARIZATION * t) @ x0 for t in taus])
        ratio = sink_norm(pts[:, 0], pts[:, 1]) / sink_norm(*x0)
        np.testing.assert_allclose(ratio, np.exp(-0.25 * taus), rtol=1e-10)

    def test_zero(self):
        assert sink_norm(0.0, 0.0) == 0.0
