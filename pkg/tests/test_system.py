from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pwlcone.bench import make_chain_3dof, make_sdof
from pwlcone.system import (
    MechanicalSystem,
    Region,
    assemble_state_space,
    classify_region,
    load_system,
    no_sliding_diagnostics,
    save_system,
    switching_values,
    system_from_dict,
    system_to_dict,
    vector_field,
    vector_field_batch,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
states6 = arrays(float, 6, elements=finite).filter(lambda x: np.linalg.norm(x) > 1e-3)


class TestMechanicalSystem:
    def test_invariants(self):
        with pytest.raises(ValueError, match="positive definite"):
            MechanicalSystem(np.eye(2), np.zeros((2, 2)), -np.eye(2), np.ones(2))
        with pytest.raises(ValueError, match="symmetric"):
            MechanicalSystem(np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2), np.ones(2))
        with pytest.raises(ValueError, match="w"):
            MechanicalSystem(np.eye(2), np.zeros((2, 2)), np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="k_n"):
            MechanicalSystem(np.eye(2), np.zeros((2, 2)), np.eye(2), np.ones(2), k_n=-1.0)
        with pytest.raises(ValueError):
            MechanicalSystem(np.eye(2), np.zeros((3, 3)), np.eye(2), np.ones(2))

    def test_roundtrip(self, tmp_path):
        sys_ = make_chain_3dof(1.5, 0.1, 0.2)
        save_system(sys_, tmp_path / "s.json")
        back = load_system(tmp_path / "s.json")
        for a in ("M", "C", "K", "w"):
            np.testing.assert_array_equal(getattr(back, a), getattr(sys_, a))
        assert back.k_n == 1.5 and back.c_n == 0.2
        d = system_to_dict(sys_)
        assert set(d) >= {"N", "M", "C", "K", "w", "k_n", "c_n"}

    def test_load_rejects_missing_fields(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"N": 1, "M": [[1]]}))
        with pytest.raises(ValueError, match="lacks"):
            load_system(p)
        with pytest.raises(ValueError):
            system_from_dict({"N": 1, "M": [[1.0]], "C": [[0.0]], "K": [[-1.0]], "w": [1.0], "k_n": 1, "c_n": 0})


class TestStateSpace:
    def test_chain_contact_entry(self):
        ss = assemble_state_space(make_chain_3dof(1.5))
        assert ss.A_plus[5, 2] == -2.5
        D = ss.A_plus - ss.A_minus
        assert np.count_nonzero(D) == 1
        np.testing.assert_array_equal(ss.A_plus[:3], ss.A_minus[:3])
        np.testing.assert_array_equal(ss.A_minus[:3, 3:], np.eye(3))
        np.testing.assert_array_equal(ss.A_minus[:3, :3], 0)

    def test_no_contact_stiffness(self):
        ss = assemble_state_space(make_chain_3dof(0.0))
        np.testing.assert_array_equal(ss.A_plus, ss.A_minus)

    def test_sdof(self):
        ss = assemble_state_space(make_sdof(3.0))
        np.testing.assert_array_equal(ss.A_minus, [[0, 1], [-1, 0]])
        np.testing.assert_array_equal(ss.A_plus, [[0, 1], [-4, 0]])
        np.testing.assert_array_equal(vector_field(ss, [1.0, 0.0]), [0.0, -4.0])

    def test_damping_pattern(self):
        sys_ = make_chain_3dof(1.0, c=0.5)
        np.testing.assert_array_equal(sys_.C, 0.5 * sys_.K)

    def test_switching_values(self, rng):
        ss = assemble_state_space(make_chain_3dof(1.5))
        assert switching_values(ss, np.zeros(6)) == (0.0, 0.0)
        for x in rng.standard_normal((20, 6)):
            ha, hb = switching_values(ss, x)
            assert hb == pytest.approx(1.5 * ha, rel=1e-14, abs=1e-15)
            ha2, hb2 = switching_values(ss, 2 * x)
            assert (ha2, hb2) == pytest.approx((2 * ha, 2 * hb))


class TestRegions:
    def test_labels(self):
        ss = assemble_state_space(make_chain_3dof(1.5, c_n=1.0))
        assert classify_region(ss, [0, 0, 0.1, 0, 0, 0.2]) is Region.ContactPlus
        assert classify_region(ss, [0, 0, -0.1, 0, 0, 0.2]) is Region.NoContactMinus
        assert classify_region(ss, [0.3, 0, 0.0, 0, 0, 0.2]) is Region.SigmaAlpha
        # exit boundary: k_n q3 + c_n q3' = 0 with q3 > 0
        assert classify_region(ss, [0, 0, 0.1, 0, 0, -0.15]) is Region.SigmaBeta
        assert classify_region(ss, np.zeros(6)) is Region.Origin

    @settings(max_examples=100, deadline=None)
    @given(states6, st.sampled_from([1e-3, 1e-2, 0.1, 2.0, 10.0, 1e3]))
    def test_scale_invariant(self, x, beta):
        ss = assemble_state_space(make_chain_3dof(1.5, c_n=0.7))
        assert classify_region(ss, beta * x) is classify_region(ss, x)

    @settings(max_examples=100, deadline=None)
    @given(states6, st.sampled_from([1e-3, 0.5, 2.0, 10.0, 1e3]))
    def test_field_homogeneous(self, x, beta):
        ss = assemble_state_space(make_chain_3dof(1.5, c_n=0.7))
        f = vector_field(ss, x)
        np.testing.assert_allclose(vector_field(ss, beta * x), beta * f, rtol=1e-12, atol=1e-12 * beta * np.abs(f).max())

    def test_batch_matches_pointwise(self, rng):
        ss = assemble_state_space(make_chain_3dof(2.0, c_n=0.5))
        X = rng.standard_normal((6, 50))
        F = vector_field_batch(ss, X)
        for j in range(50):
            np.testing.assert_allclose(F[:, j], vector_field(ss, X[:, j]), rtol=1e-14, atol=1e-15)


class TestNoSliding:
    def test_sigma_alpha_projections(self, rng):
        ss = assemble_state_space(make_chain_3dof(2.5377, c_n=1.0))
        for _ in range(50):
            x = rng.standard_normal(6)
            x[2] = 0.0
            x[5] = abs(x[5]) + 0.1
            rep = no_sliding_diagnostics(ss, x)
            assert rep.boundary is Region.SigmaAlpha
            assert rep.projection_minus == rep.projection_plus == pytest.approx(x[5], abs=1e-15)

    def test_sigma_beta_continuous(self, rng):
        ss = assemble_state_space(make_chain_3dof(2.5377, c_n=1.0))
        for _ in range(50):
            x = rng.standard_normal(6)
            x[2] = abs(x[2]) + 0.1
            x[5] = -2.5377 * x[2] / 1.0
            rep = no_sliding_diagnostics(ss, x)
            assert rep.boundary is Region.SigmaBeta
            assert rep.continuous_across_beta
            assert rep.field_jump <= 1e-12 * np.linalg.norm(x)

    def test_grazing_flag(self):
        ss = assemble_state_space(make_chain_3dof(1.5))
        rep = no_sliding_diagnostics(ss, [0.2, 0.1, 0.0, 0.3, 0.1, 0.0])
        assert rep.grazing

    def test_off_boundary_rejected(self):
        ss = assemble_state_space(make_chain_3dof(1.5))
        with pytest.raises(ValueError, match="not on a switching boundary"):
            no_sliding_diagnostics(ss, [0, 0, 1.0, 0, 0, 0])
