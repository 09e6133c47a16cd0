import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riccati_lab.errors import ConjugatePointError, DomainExit, NoConvergence
from riccati_lab.integrator import (ConjugatePointDetected, IntegratorConfig, advance_orbit, initial_state,
                                    integrate_jacobi, integrate_riccati, push_tangent, stable_riccati,
                                    unstable_riccati)
from riccati_lab.models import (ConstantCurvatureSpace, FlatTorus, HyperbolicPlane, RoundSphere, SurfaceOfRevolution,
                                SyntheticProfile, TangentVector, frame_defect, random_profile)

H = HyperbolicPlane()
SINE = SyntheticProfile(3, -np.eye(2), [(1.0, np.zeros((2, 2)), -0.5 * np.eye(2))])
# Y'' = (1 + sin(t)/2) Y, Y(0) = Y'(0) = 1, integrated with mpmath's Taylor ODE solver at 30 digits
SINE_Y10 = 31492.0128115295901281961410681144
SINE_YP10 = 30578.0922694228832483692451085453


def _semicircle(s):
    """Unit-speed half-plane geodesic x = tanh s, y = sech s."""
    return (np.array([math.tanh(s), 1 / math.cosh(s)]),
            np.array([1 / math.cosh(s) ** 2, -math.tanh(s) / math.cosh(s)]))


class TestAdvanceOrbit:
    def test_torus_line(self):
        th = TangentVector(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        st_ = advance_orbit(FlatTorus(2), initial_state(FlatTorus(2), th), 0.25)
        np.testing.assert_allclose(st_.point, [0.25, 0.0], atol=1e-15)

    def test_half_plane_vertical(self):
        st_ = advance_orbit(H, initial_state(H, H.to_unit([0.0, 1.0], [0.0, 1.0])), 1.0)
        np.testing.assert_allclose(st_.point, [0.0, math.e], atol=1e-8)

    def test_sphere_antipode(self):
        S = RoundSphere(1.0)
        st_ = advance_orbit(S, initial_state(S, S.to_unit([math.pi / 2, 0.0], [0.0, 1.0])), math.pi)
        np.testing.assert_allclose(st_.point, [math.pi / 2, math.pi], atol=1e-6)

    def test_semicircle(self):
        p, v = _semicircle(-2.0)
        st_ = advance_orbit(H, initial_state(H, TangentVector(p, v)), 4.0)
        np.testing.assert_allclose(st_.point, _semicircle(2.0)[0], atol=1e-10)
        np.testing.assert_allclose(st_.velocity, _semicircle(2.0)[1], atol=1e-10)

    def test_fourth_order(self):
        p, v = _semicircle(-5.0)
        exact = _semicircle(5.0)[0]
        errs = []
        for dt in (0.1, 0.05):
            st_ = advance_orbit(H, initial_state(H, TangentVector(p, v)), 10.0, IntegratorConfig(dt=dt))
            errs.append(np.abs(st_.point - exact).max())
        assert errs[0] / errs[1] >= 12.0

    @pytest.mark.parametrize("model,p,v", [
        (H, [0.1, 1.3], [0.7, -0.2]),
        (RoundSphere(2.0), [1.0, 0.5], [0.3, 0.4]),
        (SurfaceOfRevolution("pinched", 0.2), [0.3, 1.0], [0.2, 0.9]),
        (FlatTorus(3), [0.1, 0.5, 0.9], [0.3, -1.0, 0.2]),
    ], ids=lambda x: repr(x) if hasattr(x, "dim") else "")
    def test_unit_speed_and_frame(self, model, p, v):
        st_ = initial_state(model, model.to_unit(p, v))
        for _ in range(20):
            st_ = advance_orbit(model, st_, 0.25)
            g = model.metric(st_.point)
            assert abs(st_.velocity @ g @ st_.velocity - 1.0) < 1e-12
            assert frame_defect(model, st_.point, st_.velocity, st_.frame) < 1e-8

    def test_domain_exit(self):
        m = SurfaceOfRevolution("cosh", u_max=2.0)
        with pytest.raises(DomainExit) as exc:
            advance_orbit(m, initial_state(m, m.to_unit([0.0, 0.0], [1.0, 0.0])), 5.0)
        assert 1.9 < exc.value.t < 2.1


class TestJacobi:
    def test_sinh(self):
        Y, Yp = integrate_jacobi(H, H.to_unit([0.0, 1.0], [1.0, 1.0]), [[0.0]], [[1.0]], 2.0)
        assert Y[0, 0] == pytest.approx(math.sinh(2.0), rel=1e-10)
        assert Yp[0, 0] == pytest.approx(math.cosh(2.0), rel=1e-10)

    def test_flat(self):
        th = TangentVector(np.array([0.2, 0.3]), np.array([0.6, 0.8]))
        Y, Yp = integrate_jacobi(FlatTorus(2), th, [[1.0]], [[0.0]], 7.0)
        assert Y[0, 0] == 1.0 and Yp[0, 0] == 0.0

    def test_sine_profile_anchor(self):
        Y, Yp = integrate_jacobi(SINE, TangentVector.phase(0.0), np.eye(2), np.eye(2), 10.0)
        np.testing.assert_allclose(Y, SINE_Y10 * np.eye(2), rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(Yp, SINE_YP10 * np.eye(2), rtol=1e-9, atol=1e-9)

    @given(st.integers(0, 10_000))
    def test_wronskian(self, seed):
        rng = np.random.default_rng(seed)
        prof = random_profile(rng, 3, -3.0, 1.0, 2)
        Y0, Yp0 = rng.standard_normal((2, 2, 2))
        T = 5.0
        Y, Yp = integrate_jacobi(prof, TangentVector.phase(rng.random()), Y0, Yp0, T)
        w0 = Y0.T @ Yp0 - Yp0.T @ Y0
        wT = Y.T @ Yp - Yp.T @ Y
        assert np.abs(wT - w0).max() <= 1e-6 * T * max(1.0, np.abs(Y).max() * np.abs(Yp).max()) ** 0.5


class TestRiccati:
    def test_fixed_point(self):
        U = integrate_riccati(H, H.to_unit([0.0, 1.0], [0.3, 1.0]), [[1.0]], 5.0)
        np.testing.assert_allclose(U, [[1.0]], atol=1e-12)

    def test_flat_zero(self):
        th = TangentVector(np.array([0.2, 0.3]), np.array([0.6, 0.8]))
        assert integrate_riccati(FlatTorus(2), th, [[0.0]], 9.0)[0, 0] == 0.0

    @pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
    def test_sphere_blowup(self, r):
        S = RoundSphere(r)
        out = integrate_riccati(S, S.to_unit([math.pi / 2, 0.0], [0.0, 1.0]), None, 4 * r)
        assert isinstance(out, ConjugatePointDetected)
        assert abs(out.t_star - math.pi * r) < 1e-3 * r
        assert out.bracket[0] <= out.t_star <= out.bracket[1]

    @given(st.integers(0, 10_000))
    def test_matches_jacobi(self, seed):
        rng = np.random.default_rng(seed)
        prof = random_profile(rng, 3, -4.0, -1.0, 3)
        A = rng.standard_normal((2, 2))
        U0 = 1.5 * np.eye(2) + 0.2 * (A + A.T)
        th = TangentVector.phase(10 * rng.random())
        U = integrate_riccati(prof, th, U0, 3.0)
        Y, Yp = integrate_jacobi(prof, th, np.eye(2), U0, 3.0)
        np.testing.assert_allclose(U, Yp @ np.linalg.inv(Y), atol=1e-6)
        np.testing.assert_allclose(U, U.T, atol=1e-10)


class TestLimits:
    def test_half_plane(self):
        sol = unstable_riccati(H, H.to_unit([0.2, 1.0], [1.0, 0.4]))
        np.testing.assert_allclose(sol.U0, [[1.0]], atol=1e-10)
        assert sol.provenance.kind == "UnstableLimit" and sol.provenance.T_final <= 32
        assert sol.provenance.residual < 1e-10
        np.testing.assert_allclose(stable_riccati(H, H.to_unit([0.2, 1.0], [1.0, 0.4])).U0, [[-1.0]], atol=1e-10)

    def test_constant_space(self):
        M = ConstantCurvatureSpace(3, -4.0)
        np.testing.assert_allclose(unstable_riccati(M, TangentVector.phase()).U0, 2 * np.eye(2), atol=1e-10)
        np.testing.assert_allclose(stable_riccati(M, TangentVector.phase()).U0, -2 * np.eye(2), atol=1e-10)

    def test_flat_polynomial_rate(self):
        th = TangentVector(np.array([0.2, 0.3]), np.array([0.6, 0.8]))
        with pytest.raises(NoConvergence) as exc:
            unstable_riccati(FlatTorus(2), th, 1e-8, IntegratorConfig(dt=0.01))
        e = exc.value
        assert e.polynomial_rate and e.decay_exponent == pytest.approx(1.0, abs=1e-6)
        # U_T(0) = 1/T exactly for Y(t) = t + T
        assert e.U_last[0, 0] == pytest.approx(1.0 / e.T_max, rel=1e-9)
        assert abs(e.U_extrapolated[0, 0]) < 1e-10

    def test_flat_reachable_tolerance(self):
        th = TangentVector(np.array([0.2, 0.3]), np.array([0.6, 0.8]))
        sol = unstable_riccati(FlatTorus(2), th, 1e-4, IntegratorConfig(dt=0.05))
        # |U_T - U_{T/2}| = 1/T first drops below 1e-4 at T = 2^14
        assert sol.provenance.T_final == 2.0**14
        np.testing.assert_allclose(sol.U0, [[1.0 / 2**14]], rtol=1e-9)
        sol = stable_riccati(FlatTorus(2), th, 1e-4, IntegratorConfig(dt=0.05))
        assert abs(sol.U0[0, 0]) < 2e-4

    def test_sphere_has_conjugate_points(self):
        S = RoundSphere(1.0)
        with pytest.raises(ConjugatePointError):
            unstable_riccati(S, S.to_unit([1.2, 0.0], [0.3, 1.0]))

    @pytest.mark.parametrize("seed", range(5))
    def test_green_bounds(self, seed):
        prof = random_profile(np.random.default_rng(seed), 3, -4.0, -1.0, 3)
        U = unstable_riccati(prof, TangentVector.phase(seed)).U0
        ev = np.linalg.eigvalsh(U)
        assert ev.min() >= 1.0 - 1e-8 and ev.max() <= 2.0 + 1e-8
        Us = stable_riccati(prof, TangentVector.phase(seed)).U0
        assert np.linalg.eigvalsh(Us).max() <= -1.0 + 1e-8

    def test_green_bounds_pinched_surface(self):
        m = SurfaceOfRevolution("pinched", 0.1)
        U = unstable_riccati(m, m.to_unit([0.3, 1.0], [0.4, 0.5])).U0
        b, c = m.bounds()["b"], m.bounds()["c"]
        assert b - 1e-8 <= U[0, 0] <= c + 1e-8


class TestPushTangent:
    def test_unstable_and_stable(self):
        th = H.to_unit([0.0, 1.0], [0.5, 1.0])
        assert push_tangent(H, th, [1.0], [1.0], 3.0)[2] == pytest.approx(math.exp(3) * math.sqrt(2), rel=1e-6)
        assert push_tangent(H, th, [1.0], [-1.0], 3.0)[2] == pytest.approx(math.exp(-3) * math.sqrt(2), rel=1e-6)

    def test_flat(self):
        th = TangentVector(np.array([0.2, 0.3]), np.array([1.0, 0.0]))
        assert push_tangent(FlatTorus(2), th, [1.0], [0.0], 12.0)[2] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="Euler")
