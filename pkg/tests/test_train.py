import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from orthornn import tasks
from orthornn.cells import CellConfig, CellState, cell_backward, cell_forward, cell_init
from orthornn.config import RunConfig
from orthornn.numcore import Prng
from orthornn.train import (build_model, clip_global_norm, mse, optim_new,
                            optimizer_step, output_init, run_bptt, softmax_xent,
                            train_loop)


class TestSoftmaxXent:
    def test_uniform_two_class(self):
        loss, grad = softmax_xent(np.array([0.0, 0.0]), 0)
        assert_allclose(loss, math.log(2.0), rtol=1e-12)
        assert_allclose(grad, [-0.5, 0.5])

    def test_saturated_no_overflow(self):
        loss, _ = softmax_xent(np.array([1e6, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_three_class(self):
        loss, _ = softmax_xent(np.array([1.0, 2.0, 3.0]), 2)
        assert loss == pytest.approx(0.40761, abs=5e-6)

    def test_grad_sums_to_zero(self):
        _, grad = softmax_xent(np.array([0.3, -1.2, 2.0]), 1)
        assert grad.sum() == pytest.approx(0.0, abs=1e-12)

    def test_grad_matches_finite_differences(self):
        rng = Prng(3)
        logits = rng.uniform(-2, 2, 6)
        _, grad = softmax_xent(logits, 4)
        eps = 1e-6
        for i in range(6):
            logits[i] += eps
            up, _ = softmax_xent(logits, 4)
            logits[i] -= 2 * eps
            dn, _ = softmax_xent(logits, 4)
            logits[i] += eps
            assert grad[i] == pytest.approx((up - dn) / (2 * eps), abs=1e-9)

    def test_batched_matches_single(self):
        rng = Prng(4)
        logits = rng.uniform(-1, 1, 12).reshape(3, 4)
        targets = np.array([0, 3, 2])
        losses, grads = softmax_xent(logits, targets)
        for b in range(3):
            l1, g1 = softmax_xent(logits[b], targets[b])
            assert losses[b] == pytest.approx(l1)
            assert_allclose(grads[b], g1)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_xent(np.zeros(3), 3)


class TestMse:
    def test_equal_is_zero(self):
        loss, grad = mse(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert loss == 0.0 and not grad.any()

    def test_unit_offset(self):
        loss, _ = mse(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert loss == 1.0

    def test_scalar_case(self):
        loss, grad = mse(np.array([3.0]), np.array([1.0]))
        assert loss == 4.0
        assert_allclose(grad, [4.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros(2), np.zeros(3))


class TestOptimizers:
    def test_rmsprop_first_step(self):
        p = {"w": np.array([1.0])}
        st = optim_new("rmsprop", lr=0.001, decay=0.9)
        optimizer_step(p, {"w": np.array([1.0])}, st)
        assert p["w"][0] - 1.0 == pytest.approx(-0.0031623, abs=1e-6)

    def test_adam_first_step(self):
        p = {"w": np.array([1.0])}
        st = optim_new("adam", lr=0.001)
        optimizer_step(p, {"w": np.array([1.0])}, st)
        assert p["w"][0] - 1.0 == pytest.approx(-0.001, abs=1e-8)

    def test_zero_gradient_leaves_params(self):
        p = {"w": np.array([1.0, -2.0])}
        st = optim_new("rmsprop", lr=0.1)
        optimizer_step(p, {"w": np.zeros(2)}, st)
        assert_allclose(p["w"], [1.0, -2.0])

    def test_nan_gradient_aborts_with_name(self):
        p = {"good": np.zeros(2), "bad": np.zeros(2)}
        g = {"good": np.zeros(2), "bad": np.array([1.0, np.nan])}
        with pytest.raises(FloatingPointError, match="bad"):
            optimizer_step(p, g, optim_new("rmsprop", lr=0.1))

    def test_permutation_equivariance(self):
        """Flattening order of the parameter tree does not change updates."""
        rng = Prng(5)
        vals = {k: rng.uniform(-1, 1, 4) for k in "abcd"}
        grads = {k: rng.uniform(-1, 1, 4) for k in "abcd"}
        fwd = {k: vals[k].copy() for k in "abcd"}
        rev = {k: vals[k].copy() for k in "dcba"}
        for kind in ("rmsprop", "adam"):
            s1, s2 = optim_new(kind, 0.01), optim_new(kind, 0.01)
            optimizer_step(fwd, grads, s1)
            optimizer_step(rev, grads, s2)
            for k in "abcd":
                assert_allclose(fwd[k], rev[k])

    def test_updates_keep_angle_alias(self):
        params = cell_init(CellConfig("goru", d_x=2, d_h=4), Prng(0))
        st = optim_new("rmsprop", lr=0.1)
        grads = {k: np.ones_like(v) for k, v in params.named().items()}
        optimizer_step(params.named(), grads, st)
        assert params.arrays["angles"] is params.plan.angles


class TestClip:
    def test_scales_down(self):
        g = {"a": np.array([6.0]), "b": np.array([8.0])}   # norm 10
        clip_global_norm(g, 5.0)
        assert_allclose(g["a"], [3.0])
        assert_allclose(g["b"], [4.0])

    def test_below_threshold_unchanged(self):
        g = {"a": np.array([3.0])}
        clip_global_norm(g, 5.0)
        assert_allclose(g["a"], [3.0])

    def test_zero_unchanged(self):
        g = {"a": np.zeros(3)}
        clip_global_norm(g, 5.0)
        assert not g["a"].any()


def tiny_batch(rng, B, T, d_x, n_classes, real_inputs=True):
    if real_inputs:
        inputs = rng.uniform(-1, 1, B * T * d_x).reshape(B, T, d_x)
    else:
        inputs = rng.integers(0, d_x, B * T).reshape(B, T)
    targets = rng.integers(0, n_classes, B * T).reshape(B, T)
    return tasks.Batch(inputs, targets, np.ones((B, T)))


class TestRunBptt:
    def test_length_one_equals_single_step(self):
        """A one-step unroll is exactly cell_backward composed with the
        loss gradient."""
        rng = Prng(1)
        params = cell_init(CellConfig("gru", d_x=3, d_h=5), Prng(2))
        out = output_init(5, 4, Prng(3))
        batch = tiny_batch(rng, 2, 1, 3, 4)
        res = run_bptt(params, out, batch)

        x = batch.inputs[:, 0]
        state, tape = cell_forward(params, CellState(np.zeros((2, 5))), x)
        logits = state.h @ out.W.T + out.b
        losses, dlogits = softmax_xent(logits, batch.targets[:, 0])
        dlogits = dlogits / 2.0   # mean over 2 unmasked (batch, step) cells
        grads_cell, _, _ = cell_backward(params, tape, dlogits @ out.W)
        assert res.loss == pytest.approx(float(losses.mean()))
        for name, g in grads_cell.items():
            assert_allclose(res.grads[name], g, atol=1e-12, err_msg=name)
        assert_allclose(res.grads["W_out"], dlogits.T @ state.h, atol=1e-12)

    def test_duplicated_batch_matches_single(self):
        """Averaging invariance: two identical rows give the gradients of
        one."""
        rng = Prng(7)
        params = cell_init(CellConfig("goru", d_x=4, d_h=6), Prng(8))
        out = output_init(6, 4, Prng(9))
        single = tiny_batch(rng, 1, 5, 4, 4)
        double = tasks.Batch(np.repeat(single.inputs, 2, axis=0),
                             np.repeat(single.targets, 2, axis=0),
                             np.repeat(single.mask, 2, axis=0))
        r1 = run_bptt(params, out, single)
        r2 = run_bptt(params, out, double)
        assert r1.loss == pytest.approx(r2.loss, rel=1e-12)
        for k in r1.grads:
            assert_allclose(r1.grads[k], r2.grads[k], atol=1e-12, err_msg=k)

    def test_task_sample_list_accepted(self):
        rng = Prng(11)
        samples = [tasks.gen_copy(4, 4, 2, rng) for _ in range(3)]
        params = cell_init(CellConfig("gru", d_x=6, d_h=5), Prng(12))
        out = output_init(5, 6, Prng(13))
        res = run_bptt(params, out, samples)
        assert math.isfinite(res.loss)

    def test_non_finite_loss_reports_step(self):
        params = cell_init(CellConfig("vanilla", d_x=3, d_h=4), Prng(1))
        out = output_init(4, 3, Prng(2))
        out.W[...] = np.inf
        batch = tiny_batch(Prng(3), 1, 4, 3, 3)
        with np.errstate(invalid="ignore"), pytest.raises(RuntimeError, match="step 0"):
            run_bptt(params, out, batch)

    def test_gate_recording_shapes_and_errors(self):
        rng = Prng(20)
        params = cell_init(CellConfig("goru", d_x=3, d_h=4), Prng(21))
        out = output_init(4, 3, Prng(22))
        batch = tiny_batch(rng, 2, 6, 3, 3)
        res = run_bptt(params, out, batch, record_gates=True)
        assert res.gates.shape == (6, 2, 4)
        assert (res.gates >= 0).all() and (res.gates <= 1).all()
        vp = cell_init(CellConfig("vanilla", d_x=3, d_h=4), Prng(23))
        with pytest.raises(ValueError):
            run_bptt(vp, out, batch, record_gates=True)

    def test_uniform_logit_anchor_copy_and_denoise(self):
        """With a zeroed readout the per-step loss is exactly the uniform
        cross-entropy ln(n_classes) on every unmasked step."""
        rng = Prng(30)
        for task in ("copy", "denoise"):
            batch = tasks.gen_batch(task, 12, 8, 3, 4, rng)
            params = cell_init(CellConfig("gru", d_x=10, d_h=6), Prng(31))
            out = output_init(6, 10, Prng(32))
            out.W[...] = 0.0
            out.b[...] = 0.0
            res = run_bptt(params, out, batch)
            assert abs(res.loss - math.log(10)) <= 0.05 * math.log(10)


class TestTrainLoop:
    def base_cfg(self, **kw):
        defaults = dict(task="copy", model="gru", T=6, n_data=4, K=2, d_h=6,
                        batch=4, steps=6, seed=5, log_interval=2)
        defaults.update(kw)
        return RunConfig(**defaults)

    def test_zero_steps_is_a_no_op(self):
        cfg = self.base_cfg(steps=0)
        fresh, _, _ = build_model(cfg)
        result = train_loop(cfg)
        assert result.rows == []
        for k, v in result.params.named().items():
            assert np.array_equal(v, fresh.named()[k])

    def test_metric_rows_at_intervals(self):
        result = train_loop(self.base_cfg())
        assert [r.step for r in result.rows] == [2, 4, 6]
        assert all(math.isfinite(r.loss) for r in result.rows)
        assert all(r.wallclock_s == 0.0 for r in result.rows)

    def test_identical_seeds_identical_streams(self):
        a = train_loop(self.base_cfg())
        b = train_loop(self.base_cfg())
        assert [(r.step, r.loss, r.accuracy) for r in a.rows] == \
               [(r.step, r.loss, r.accuracy) for r in b.rows]
        for k in a.params.named():
            assert np.array_equal(a.params.named()[k], b.params.named()[k])

    def test_loss_decreases_on_trivial_task(self):
        cfg = self.base_cfg(steps=60, log_interval=20, model="gru")
        result = train_loop(cfg)
        assert result.rows[-1].loss < result.rows[0].loss

    def test_single_vs_double_precision_first_steps(self):
        """f32 and f64 runs agree on loss to 1e-3 over the first 10 steps."""
        base = dict(task="copy", model="goru", T=8, n_data=4, K=2, d_h=8,
                    batch=4, steps=10, seed=9, log_interval=1)
        r64 = train_loop(RunConfig(**base, dtype="float64"))
        r32 = train_loop(RunConfig(**base, dtype="float32"))
        for a, b in zip(r64.rows, r32.rows):
            assert abs(a.loss - b.loss) < 1e-3

    def test_gradients_flow_through_angles(self):
        cfg = self.base_cfg(model="goru", steps=3)
        result = train_loop(cfg)
        fresh, _, _ = build_model(cfg)
        assert not np.array_equal(result.params.arrays["angles"], fresh.arrays["angles"])
