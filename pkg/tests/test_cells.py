import numpy as np
import pytest
from numpy.testing import assert_allclose

from orthornn import orthocore
from orthornn.cells import (CellConfig, CellState, cell_backward, cell_forward,
                            cell_init, match_hidden_size, param_count, zero_state)
from orthornn.harness import gradcheck_single_step
from orthornn.numcore import Prng

ALL_VARIANTS = [
    ("vanilla", {}),
    ("gru", {}),
    ("lstm", {}),
    ("ortho_rnn", {}),
    ("ortho_rnn", {"layout": "fft"}),
    ("goru", {}),
    ("goru", {"layout": "fft"}),
    ("goru", {"disable_reset": True}),
    ("goru", {"disable_update": True}),
]


def make(kind, d_x=3, d_h=4, seed=0, **kw):
    return cell_init(CellConfig(kind, d_x=d_x, d_h=d_h, **kw), Prng(seed))


def zero_weights(params):
    for arr in params.arrays.values():
        arr[...] = 0.0
    return params


class TestForwardClosedForms:
    def test_gru_all_zero_weights(self):
        """z = r = 1/2 and a zero candidate halve the state."""
        params = zero_weights(make("gru", d_h=2))
        st, _ = cell_forward(params, CellState(np.array([[1.0, 1.0]])), np.zeros((1, 3)))
        assert_allclose(st.h, [[0.5, 0.5]])

    def test_goru_zero_weights_identity_rotation(self):
        """z = r = 1/2, candidate = modrelu(h/2, 0) = h/2, so h' = 3h/4."""
        params = zero_weights(make("goru", d_h=2))
        st, _ = cell_forward(params, CellState(np.array([[1.0, 1.0]])), np.zeros((1, 3)))
        assert_allclose(st.h, [[0.75, 0.75]])

    def test_vanilla_zero_weights(self):
        params = zero_weights(make("vanilla", d_h=2))
        st, _ = cell_forward(params, CellState(np.array([[1.0, -1.0]])), np.ones((1, 3)))
        assert_allclose(st.h, [[0.0, 0.0]])

    def test_goru_saturated_update_gate_carries_exactly(self):
        """With z pinned at 1 the carry path is bit-exact: h' is h."""
        params = make("goru", d_h=4, seed=3)
        params.arrays["b_z"][:] = 50.0   # sigmoid(50) rounds to exactly 1.0
        h = Prng(4).uniform(-1, 1, 8).reshape(2, 4)
        st, tape = cell_forward(params, CellState(h), Prng(5).uniform(-1, 1, 6).reshape(2, 3))
        assert np.array_equal(tape["z"], np.ones((2, 4)))
        assert np.array_equal(st.h, h)

    def test_goru_reduces_to_pure_rotation(self):
        """Both gates ablated with zero dense weights: the step is exactly
        the orthogonal map, so the state norm is preserved."""
        params = zero_weights(make("goru", d_h=4, seed=6,
                                   disable_reset=True, disable_update=True))
        params.plan.angles[:] = Prng(7).uniform(-3, 3, params.plan.n_angles)
        h = Prng(8).uniform(0.1, 1, 4).reshape(1, 4)
        st, _ = cell_forward(params, CellState(h), np.zeros((1, 3)))
        assert_allclose(st.h, orthocore.apply(params.plan, h), atol=1e-15)
        n0, n1 = np.linalg.norm(h), np.linalg.norm(st.h)
        assert abs(n1 - n0) <= 1e-12 * n0


class TestInit:
    def test_same_seed_bit_identical(self):
        a = make("goru", d_h=6, seed=42)
        b = make("goru", d_h=6, seed=42)
        for k in a.arrays:
            assert np.array_equal(a.arrays[k], b.arrays[k]), k

    def test_goru_angle_count(self):
        params = make("goru", d_h=4)
        assert params.plan.n_angles == 6
        assert params.arrays["angles"] is params.plan.angles

    def test_shapes(self):
        p = make("gru", d_x=5, d_h=7)
        assert p.arrays["W_z"].shape == (7, 12)
        assert p.arrays["W_h"].shape == (7, 7)
        assert p.arrays["W_x"].shape == (7, 5)
        q = make("goru", d_x=5, d_h=8)
        assert q.arrays["W_z"].shape == (8, 8)
        assert q.arrays["W_zx"].shape == (8, 5)

    def test_gate_bias_init(self):
        p = make("lstm", d_h=4, gate_bias_init=1.0)
        assert_allclose(p.arrays["b_f"], np.ones(4))
        assert_allclose(p.arrays["b_i"], np.zeros(4))
        g = make("goru", d_h=4, gate_bias_init=0.5)
        assert_allclose(g.arrays["b_z"], 0.5 * np.ones(4))
        assert_allclose(g.arrays["b_h"], np.zeros(4))

    def test_ablated_gate_owns_no_parameters(self):
        p = make("goru", d_h=4, disable_reset=True)
        assert "W_r" not in p.arrays and "b_r" not in p.arrays
        q = make("goru", d_h=4, disable_update=True)
        assert "W_z" not in q.arrays and "b_z" not in q.arrays

    def test_ablation_flags_rejected_elsewhere(self):
        with pytest.raises(ValueError):
            CellConfig("gru", d_x=2, d_h=4, disable_reset=True)


class TestParamCount:
    def test_gru_hidden_blocks(self):
        _, h2h = param_count(CellConfig("gru", d_x=1, d_h=100))
        assert h2h == 30_000

    def test_lstm_hidden_blocks(self):
        _, h2h = param_count(CellConfig("lstm", d_x=1, d_h=90))
        assert h2h == 32_400

    def test_goru_full_128(self):
        _, h2h = param_count(CellConfig("goru", d_x=1, d_h=128))
        assert h2h == 128 * 127 // 2 + 2 * 128 * 128 == 40_896

    def test_total_matches_arrays(self):
        for kind, kw in ALL_VARIANTS:
            cfg = CellConfig(kind, d_x=3, d_h=8, **kw)
            total, _ = param_count(cfg)
            params = cell_init(cfg, Prng(0))
            assert total == sum(a.size for a in params.arrays.values()), (kind, kw)

    def test_ablations_strictly_fewer(self):
        full, _ = param_count(CellConfig("goru", d_x=3, d_h=16))
        no_r, _ = param_count(CellConfig("goru", d_x=3, d_h=16, disable_reset=True))
        no_z, _ = param_count(CellConfig("goru", d_x=3, d_h=16, disable_update=True))
        assert no_r < full and no_z < full

    def test_match_hidden_size(self):
        d = match_hidden_size("gru", 10_208)
        assert d == 58   # 3*58^2 = 10092 is the closest multiple-of-3 square
        assert match_hidden_size("lstm", 10_208) == 51
        _, h2h = param_count(CellConfig("goru", d_x=1, d_h=64))
        assert h2h == 10_208


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        for kind, kw in ALL_VARIANTS:
            params = make(kind, **kw, d_h=4, seed=1)
            h = Prng(2).uniform(-1, 1, 8).reshape(2, 4)
            c = Prng(3).uniform(-1, 1, 8).reshape(2, 4) if kind == "lstm" else None
            st, tape = cell_forward(params, CellState(h, c), Prng(4).uniform(-1, 1, 6).reshape(2, 3))
            grads, gst, gx = cell_backward(params, tape, np.zeros((2, 4)))
            assert not gx.any() and not gst.h.any()
            assert all(not g.any() for g in grads.values())

    @pytest.mark.parametrize("kind,kw", ALL_VARIANTS)
    def test_finite_differences_20_draws(self, kind, kw):
        """Single-step gradients wrt params, state, and input match central
        differences (step 1e-6) to 1e-5 over 20 random draws, excluding
        draws near modrelu kinks."""
        worst = 0.0
        for draw in range(20):
            worst = max(worst, gradcheck_single_step(kind, seed=1000 * draw + 17, **kw))
        assert worst <= 1e-5, f"{kind} {kw}: worst {worst:.3e}"

    def test_ortho_rnn_gradient_isometry(self):
        """Pure-rotation path: backward through the orthogonal map preserves
        the gradient norm."""
        params = make("ortho_rnn", d_h=6, seed=9)
        params.arrays["W_x"][...] = 0.0
        params.arrays["b_h"][...] = 0.0
        # near-identity rotation on a strictly positive state keeps every
        # pre-activation positive, so modrelu passes gradients through
        params.plan.angles[:] *= 0.01
        h = Prng(10).uniform(0.2, 1.0, 6).reshape(1, 6)
        _, tape = cell_forward(params, CellState(h), np.zeros((1, 3)))
        assert (tape["pre"] > 0).all()
        g = Prng(11).uniform(-1, 1, 6).reshape(1, 6)
        _, gst, _ = cell_backward(params, tape, g)
        assert abs(np.linalg.norm(gst.h) - np.linalg.norm(g)) <= 1e-12 * np.linalg.norm(g)

    def test_dense_and_layered_engines_agree(self):
        from orthornn.orthocore import DenseRotation
        params = make("goru", d_h=8, seed=12)
        rot = DenseRotation(params.plan)
        h = Prng(13).uniform(-1, 1, 16).reshape(2, 8)
        x = Prng(14).uniform(-1, 1, 6).reshape(2, 3)
        g = Prng(15).uniform(-1, 1, 16).reshape(2, 8)
        st_a, tape_a = cell_forward(params, CellState(h), x)
        st_b, tape_b = cell_forward(params, CellState(h), x, rot=rot)
        assert_allclose(st_a.h, st_b.h, atol=1e-13)
        grads_a, gst_a, gx_a = cell_backward(params, tape_a, g)
        grads_b, gst_b, gx_b = cell_backward(params, tape_b, g, rot=rot)
        grads_b["angles"] = rot.finish()
        assert_allclose(gst_a.h, gst_b.h, atol=1e-12)
        assert_allclose(gx_a, gx_b, atol=1e-12)
        for k in grads_a:
            assert_allclose(grads_a[k], grads_b[k], atol=1e-11, err_msg=k)


class TestStability:
    @pytest.mark.parametrize("kind,kw", ALL_VARIANTS)
    def test_states_stay_finite_over_1000_steps(self, kind, kw):
        params = make(kind, **kw, d_h=8, seed=21)
        rng = Prng(22)
        state = zero_state(params.config, 2)
        for _ in range(1000):
            x = rng.uniform(-1.0, 1.0, 6).reshape(2, 3)
            state, _ = cell_forward(params, state, x)
        assert np.isfinite(state.h).all()
        if state.c is not None:
            assert np.isfinite(state.c).all()


class TestShapeErrors:
    def test_bad_input_width(self):
        params = make("gru")
        with pytest.raises(ValueError):
            cell_forward(params, CellState(np.zeros((1, 4))), np.zeros((1, 5)))

    def test_bad_state_width(self):
        params = make("gru")
        with pytest.raises(ValueError):
            cell_forward(params, CellState(np.zeros((1, 3))), np.zeros((1, 3)))

    def test_lstm_requires_cell_state(self):
        params = make("lstm")
        with pytest.raises(ValueError):
            cell_forward(params, CellState(np.zeros((1, 4))), np.zeros((1, 3)))
