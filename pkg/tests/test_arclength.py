from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwlcone import arclength as al
from pwlcone.cone import ConeGuess, solve_elementary_cone
from pwlcone.flow import poincare_map_k, simulate
from pwlcone.system import PwlStateSpace


@pytest.fixture(scope="module")
def curve10(ss10, cone10):
    return al.solve_generating_curve(ss10, cone10, method="shooting")


@pytest.fixture(scope="module")
def curve_damped(ss_damped10, cone_damped10):
    return al.solve_generating_curve(ss_damped10, cone_damped10, method="shooting")


@pytest.fixture(scope="module")
def sdof_cone(ss_sdof3):
    return solve_elementary_cone(ss_sdof3, ConeGuess(np.array([0.0, -1.0]), np.array([3.0, 1.5]), 1.0))


def _unit(rng, n):
    g = rng.standard_normal(n)
    return g / np.linalg.norm(g)


class TestTangent:
    def test_sdof_free(self):
        from pwlcone.bench import make_sdof
        from pwlcone.system import assemble_state_space

        ss = assemble_state_space(make_sdof(0.0))
        np.testing.assert_allclose(al.tangent_field(ss, [1.0, 0.0]), [0.0, -1.0], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_orthogonal_unit_speed(self, seed):
        from conftest import chain_ss

        ss = chain_ss(2.5377, 0.1, 1.0)
        G = _unit(np.random.default_rng(seed), 6)
        T = al.tangent_field(ss, G)
        assert abs(G @ T) <= 1e-12 * max(1.0, np.linalg.norm(T))
        assert np.linalg.norm(al.geometry_rhs(ss, G)) == pytest.approx(1.0, abs=1e-14)

    def test_thousand_random(self, ss15, rng):
        for _ in range(1000):
            G = _unit(rng, 6)
            assert abs(G @ al.tangent_field(ss15, G)) <= 1e-12

    def test_real_eigendirection(self):
        A = np.array([[0.0, 1.0], [2.0, -1.0]])  # eigenvalue 1 with eigenvector (1, 1)
        ss = PwlStateSpace(A, A, np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.0, 0.0)
        G = np.array([1.0, 1.0]) / np.sqrt(2)
        with pytest.raises(al.SingularTangentError):
            al.tangent_field(ss, G)
        with pytest.raises(al.SingularTangentError):
            al.geometry_rhs(ss, G)

    def test_non_unit_rejected(self, ss15):
        with pytest.raises(ValueError):
            al.tangent_field(ss15, np.ones(6))


class TestSdofCircle:
    @pytest.mark.parametrize("method", ["shooting", "hbm"])
    def test_length(self, ss_sdof3, sdof_cone, method):
        curve = al.solve_generating_curve(ss_sdof3, sdof_cone, method=method, n_harmonics=12)
        assert curve.L == pytest.approx(2 * np.pi, abs=1e-8)
        G0 = curve(0.0)[:, 0]
        assert abs(G0[0]) <= 1e-10 and G0[1] < 0
        assert al.multiplier_line_integral(ss_sdof3, curve) == pytest.approx(1.0, abs=1e-8)

    def test_free_oscillator_rates(self):
        from pwlcone.bench import make_sdof
        from pwlcone.system import assemble_state_space

        ss = assemble_state_space(make_sdof(0.0))
        sol = solve_elementary_cone(ss, ConeGuess(np.array([0.0, -1.0]), np.array([3.0, 3.0]), 1.0))
        curve = al.solve_generating_curve(ss, sol, method="shooting")
        rdot, sdot = al.reduced_rates(ss, curve, al.ReducedState(1.0, 0.7))
        assert rdot == pytest.approx(0.0, abs=1e-12)
        assert sdot == pytest.approx(1.0, abs=1e-12)


class TestConservative10:
    def test_closure_and_sphere(self, curve10):
        d = curve10.diagnostics
        assert d["closure"] <= 1e-8
        assert d["sphere_drift"] <= 1e-9
        s = np.linspace(0, curve10.L, 2001)
        G = curve10(s)
        np.testing.assert_allclose(np.linalg.norm(G, axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(G[:, 0], G[:, -1], atol=1e-8)
        # unit speed
        h = 1e-6
        dG = (curve10(s[1:-1] + h) - curve10(s[1:-1] - h)) / (2 * h)
        assert np.abs(np.linalg.norm(dG, axis=0) - 1).max() <= 1e-6

    def test_multiplier(self, ss10, curve10):
        assert al.multiplier_line_integral(ss10, curve10) == pytest.approx(1.0, abs=1e-6)

    def test_fourier_export(self, curve10):
        s = np.linspace(0, curve10.L, 517)
        err = np.abs(curve10.fourier_curve(s) - curve10(s)).max()
        assert err < 5e-2
        assert curve10.Xc.shape == (12, 6) and curve10.Xs.shape == (12, 6) and curve10.X0.shape == (6,)
        assert curve10.Omega_s == pytest.approx(2 * np.pi / curve10.L)

    def test_rom_r_constant_per_loop(self, ss10, curve10, cone10):
        T = cone10.T
        t, r, s = al.rom_integrate(ss10, curve10, 1.0, 0.3 * curve10.L, 10 * T, t_eval=T * np.arange(11))
        assert np.abs(r - 1).max() <= 1e-6
        assert np.abs(np.mod(s - s[0] + 0.5 * curve10.L, curve10.L) - 0.5 * curve10.L).max() <= 1e-6

    def test_invariance(self, ss10, curve10, cone10):
        x0 = al.reconstruct_state(curve10, al.ReducedState(2.0, 0.3 * curve10.L))
        tr = simulate(ss10, x0, 5 * cone10.T, dt=cone10.T / 40)
        assert al.invariance_distance(ss10, curve10, tr) <= 1e-5

    def test_off_cone_distance(self, ss10, curve10, rng):
        x = rng.standard_normal(6)
        d0 = al.invariance_distance(ss10, curve10, x[None, :])
        assert d0 > 1e-2

    def test_reconstruct_and_project(self, curve10, ss10):
        assert np.all(al.reconstruct_state(curve10, al.ReducedState(0.0, 1.0)) == 0)
        x = al.reconstruct_state(curve10, al.ReducedState(2.0, 0.0))
        np.testing.assert_allclose(x, 2 * curve10(0.0)[:, 0])
        assert abs(ss10.n_alpha @ x) <= 1e-10
        for s0 in np.linspace(0.05, 0.95, 7) * curve10.L:
            x = al.reconstruct_state(curve10, al.ReducedState(3.0, s0))
            assert np.linalg.norm(x) == pytest.approx(3.0, rel=1e-8)
            st_ = al.nearest_reduced_state(curve10, x)
            assert st_.r == pytest.approx(3.0, rel=1e-12)
            assert st_.s == pytest.approx(s0, abs=1e-9)

    def test_hbm_runs(self, ss10, cone10):
        curve = al.solve_generating_curve(ss10, cone10, method="hbm", n_harmonics=12)
        assert curve.report.converged
        assert curve.L == pytest.approx(10.6079, rel=5e-3)  # Fourier truncation at N_h = 12
        s = np.linspace(0, curve.L, 333)
        np.testing.assert_allclose(np.linalg.norm(curve(s), axis=0), 1.0, atol=1e-14)

    def test_io(self, curve10, tmp_path):
        al.save_spherical_curve(curve10, tmp_path / "c.json")
        back = al.load_spherical_curve(tmp_path / "c.json")
        assert back.L == curve10.L and back.n_harmonics == 12
        np.testing.assert_array_equal(back.coeffs, curve10.coeffs)
        s = np.linspace(0, back.L, 50)
        np.testing.assert_allclose(back(s), curve10.without_dense()(s))
        al.write_reduced_csv([0.0], [1.0], [0.5], tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == "t,r,s\n0,1,0.5\n"


class TestDamped10:
    def test_multiplier(self, ss_damped10, curve_damped, cone_damped10):
        mu = al.multiplier_line_integral(ss_damped10, curve_damped)
        assert mu == pytest.approx(0.8066, abs=5e-4)
        y, _ = poincare_map_k(ss_damped10, cone_damped10.xi, cone_damped10.k)
        assert mu == pytest.approx(np.linalg.norm(y), abs=1e-5)

    def test_radial_decay(self, ss_damped10, curve_damped):
        s = np.linspace(0, curve_damped.L, 4001)
        gf, _ = al._rates_batch(ss_damped10, curve_damped, s)
        assert np.trapezoid(gf, s) < 0

    def test_rom_ratio(self, ss_damped10, curve_damped, cone_damped10):
        T = cone_damped10.T
        s0 = 0.3 * curve_damped.L
        t, r, s = al.rom_integrate(ss_damped10, curve_damped, 1.0, s0, T, t_eval=[0.0, T])
        assert r[1] == pytest.approx(0.8066, abs=5e-4)
        assert s[1] == pytest.approx(s0, abs=1e-6)

    def test_bad_r0(self, ss_damped10, curve_damped):
        with pytest.raises(ValueError):
            al.rom_integrate(ss_damped10, curve_damped, 0.0, 0.0, 1.0)

    def test_unknown_method(self, ss_damped10, cone_damped10):
        with pytest.raises(ValueError):
            al.solve_generating_curve(ss_damped10, cone_damped10, method="magic")
