"""Autodiff core, layers, optimizer, and checkpoint tests."""

import numpy as np
import pytest

from sawvoc.nn import ParameterStore, Tensor, adam_step, lr_schedule, no_grad
from sawvoc.nn.checkpoint import (
    CheckpointShapeError,
    load_checkpoint,
    restore_into,
    save_checkpoint,
)
from sawvoc.nn.gradcheck import check_gradients
from sawvoc.nn.layers import (
    CausalConv1d,
    Linear,
    LstmProjected,
    causal_dilated_conv1d,
    gated_activation,
    softmax,
    softmax_cross_entropy,
)

GRAD_TOL = 1e-4


def t64(rng, *shape):
    return Tensor(rng.normal(size=shape).astype(np.float64), requires_grad=True)


class TestTensorOps:
    def test_add_mul_broadcast_grads(self):
        rng = np.random.default_rng(0)
        a = t64(rng, 3, 4)
        b = t64(rng, 4)
        assert check_gradients(lambda: ((a + b) * a).sum(), [a, b]) < GRAD_TOL

    def test_matmul_grads(self):
        rng = np.random.default_rng(1)
        a = t64(rng, 3, 4)
        b = t64(rng, 4, 2)
        assert check_gradients(lambda: (a @ b).sum(), [a, b]) < GRAD_TOL

    def test_elementwise_grads(self):
        rng = np.random.default_rng(2)
        a = t64(rng, 5)
        f = lambda: (a.tanh() + a.sigmoid() + a.exp() + (a * a + 1.0).log() + (a * a + 0.5).sqrt()).sum()
        assert check_gradients(f, [a]) < GRAD_TOL

    def test_div_grads(self):
        rng = np.random.default_rng(3)
        a = t64(rng, 4)
        b = Tensor(rng.uniform(1.0, 2.0, size=4), requires_grad=True)
        assert check_gradients(lambda: (a / b).sum(), [a, b]) < GRAD_TOL

    def test_sum_axis_and_getitem_grads(self):
        rng = np.random.default_rng(4)
        a = t64(rng, 3, 5)
        f = lambda: (a.sum(axis=0) * a[1, :]).sum() + a[:, 2:4].mean()
        assert check_gradients(f, [a]) < GRAD_TOL

    def test_fancy_index_grads(self):
        rng = np.random.default_rng(5)
        a = t64(rng, 6, 3)
        idx = np.array([0, 2, 2, 5])
        assert check_gradients(lambda: (a[idx] * a[idx]).sum(), [a]) < GRAD_TOL

    def test_grad_accumulates_until_zeroed(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        (a * a).backward()
        (a * a).backward()
        assert a.grad[0] == pytest.approx(8.0)
        a.zero_grad()
        assert np.all(a.grad == 0)
        (a * a).backward()
        assert a.grad[0] == pytest.approx(4.0)

    def test_no_grad_blocks_tape(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = (a * 2.0).sum()
        assert out._backward is None and not out.requires_grad

    def test_backward_needs_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_deep_chain_no_recursion_error(self):
        a = Tensor(np.array([0.5]), requires_grad=True)
        x = a
        for _ in range(5000):
            x = x * 1.0001
        x.backward()
        assert np.isfinite(a.grad[0])


class TestLinear:
    def test_identity(self):
        store = ParameterStore()
        rng = np.random.default_rng(0)
        lin = Linear(store, "l", 4, 4, rng)
        lin.W.data = np.eye(4, dtype=np.float32)
        x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        np.testing.assert_allclose(lin(x).data, x.data, atol=1e-7)

    def test_shape_contract(self):
        store = ParameterStore()
        lin = Linear(store, "l", 4, 2, np.random.default_rng(0))
        y = lin(Tensor(np.zeros((3, 4), dtype=np.float32)))
        assert y.shape == (3, 2)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        x = t64(rng, 3, 4)
        w = t64(rng, 4, 2)
        b = t64(rng, 2)
        assert check_gradients(lambda: (x @ w + b).sum(), [x, w, b]) < GRAD_TOL

    def test_shape_mismatch_raises(self):
        store = ParameterStore()
        lin = Linear(store, "l", 4, 2, np.random.default_rng(0))
        with pytest.raises(ValueError):
            lin(Tensor(np.zeros((3, 5), dtype=np.float32)))


class TestCausalConv:
    def test_identity_tap(self):
        kernel = np.zeros((2, 3, 3), dtype=np.float64)
        kernel[0] = np.eye(3)
        x = Tensor(np.random.default_rng(0).normal(size=(10, 3)))
        y = causal_dilated_conv1d(x, Tensor(kernel), dilation=1)
        np.testing.assert_allclose(y.data, x.data)

    def test_impulse_response_dilation4(self):
        kernel = Tensor(np.ones((2, 1, 1)))
        x = np.zeros((20, 1))
        x[10, 0] = 1.0
        y = causal_dilated_conv1d(Tensor(x), kernel, dilation=4).data[:, 0]
        nonzero = set(np.nonzero(y)[0].tolist())
        assert nonzero == {10, 14}

    def test_causality_perturbation(self):
        rng = np.random.default_rng(7)
        kernel = Tensor(rng.normal(size=(2, 3, 4)))
        x = rng.normal(size=(30, 3))
        base = causal_dilated_conv1d(Tensor(x), kernel, dilation=3).data
        x2 = x.copy()
        x2[17] += 1.0
        pert = causal_dilated_conv1d(Tensor(x2), kernel, dilation=3).data
        np.testing.assert_array_equal(base[:17], pert[:17])
        assert np.any(base[17:] != pert[17:])

    def test_gradients(self):
        rng = np.random.default_rng(8)
        x = t64(rng, 7, 2)
        k = t64(rng, 2, 2, 3)
        b = t64(rng, 3)
        scale = Tensor(rng.normal(size=(7, 3)))
        f = lambda: (causal_dilated_conv1d(x, k, 2, b) * scale).sum()
        assert check_gradients(f, [x, k, b]) < GRAD_TOL

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError):
            causal_dilated_conv1d(Tensor(np.zeros((5, 3))), Tensor(np.zeros((2, 2, 4))), 1)


class TestGatedActivation:
    def test_gate_closed_limit(self):
        y = gated_activation(Tensor(np.full(4, 3.0)), Tensor(np.full(4, -50.0)))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-12)

    def test_zero_filter(self):
        y = gated_activation(Tensor(np.zeros(4)), Tensor(np.random.default_rng(0).normal(size=4)))
        np.testing.assert_array_equal(y.data, np.zeros(4))

    def test_gradients(self):
        rng = np.random.default_rng(9)
        a = t64(rng, 3, 4)
        b = t64(rng, 3, 4)
        assert check_gradients(lambda: gated_activation(a, b).sum(), [a, b]) < GRAD_TOL

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gated_activation(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestLstmProjected:
    def make(self, rng, in_dim=5, cell=6, proj=4, dtype=np.float64):
        store = ParameterStore()
        return store, LstmProjected(store, "lstm", in_dim, cell, proj, rng, dtype=dtype)

    def test_zero_everything_zero_output(self):
        store, lstm = self.make(np.random.default_rng(0))
        for p in store.params.values():
            p.data[:] = 0.0
        seq, _ = lstm(Tensor(np.zeros((7, 5))))
        np.testing.assert_array_equal(seq.data, np.zeros((7, 4)))

    def test_output_shape(self):
        _, lstm = self.make(np.random.default_rng(1))
        for t_len in (1, 3, 9):
            seq, (c, p) = lstm(Tensor(np.zeros((t_len, 5))))
            assert seq.shape == (t_len, 4)
        seq, _ = lstm(Tensor(np.zeros((2, 3, 5))))
        assert seq.shape == (2, 3, 4)

    def test_single_step_gradients_all_params(self):
        rng = np.random.default_rng(10)
        store, lstm = self.make(rng, in_dim=3, cell=4, proj=3)
        x = t64(rng, 1, 3)
        weight = Tensor(rng.normal(size=(1, 3)))
        f = lambda: (lstm(x)[0] * weight).sum()
        params = [x] + list(store.params.values())
        assert check_gradients(f, params) < GRAD_TOL

    def test_multi_step_gradients(self):
        rng = np.random.default_rng(11)
        store, lstm = self.make(rng, in_dim=2, cell=3, proj=2)
        x = t64(rng, 4, 2)
        f = lambda: (lstm(x)[0] * lstm(x)[0]).sum()
        assert check_gradients(f, [x] + list(store.params.values())) < GRAD_TOL


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((3, 256))), np.array([0, 100, 255]))
        assert loss.item() == pytest.approx(np.log(256), rel=1e-9)

    def test_saturated_logit(self):
        logits = np.zeros((1, 256))
        logits[0, 42] = 1e6
        loss = softmax_cross_entropy(Tensor(logits), np.array([42]))
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        targets = np.array([1, 0, 7, 3])
        logits.zero_grad()
        softmax_cross_entropy(logits, targets).backward()
        p = softmax(logits.data)
        p[np.arange(4), targets] -= 1.0
        np.testing.assert_allclose(logits.grad, p / 4, atol=1e-12)

    def test_gradient_fd(self):
        rng = np.random.default_rng(13)
        logits = t64(rng, 3, 5)
        targets = np.array([0, 4, 2])
        assert check_gradients(lambda: softmax_cross_entropy(logits, targets), [logits]) < GRAD_TOL

    def test_out_of_range_target(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor(np.zeros((1, 8))), np.array([8]))


class TestAdam:
    def test_zero_grad_leaves_params(self):
        store = ParameterStore()
        p = store.param("w", np.array([1.0, 2.0], dtype=np.float32))
        p.zero_grad()
        adam_step(store, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert store.step_count == 1

    def test_first_step_magnitude(self):
        store = ParameterStore()
        p = store.param("w", np.array([0.0], dtype=np.float64))
        p.grad = np.array([0.37])
        adam_step(store, lr=0.01)
        assert p.data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic_convergence(self):
        store = ParameterStore()
        w = store.param("w", np.array([0.0], dtype=np.float64))
        for _ in range(200):
            store.zero_grad()
            w.grad[:] = 2.0 * (w.data - 3.0)
            adam_step(store, lr=0.1)
        assert abs(w.data[0] - 3.0) < 0.1

    def test_step_count_monotone(self):
        store = ParameterStore()
        store.param("w", np.zeros(1, dtype=np.float32))
        counts = []
        for _ in range(5):
            adam_step(store, lr=0.0)
            counts.append(store.step_count)
        assert counts == [1, 2, 3, 4, 5]


class TestLrSchedule:
    def test_paper_defaults(self):
        assert lr_schedule(0, 0.0001, 100000) == pytest.approx(0.0001)
        assert lr_schedule(100000, 0.0001, 100000) == pytest.approx(0.00005)
        assert lr_schedule(250000, 0.0001, 100000) == pytest.approx(0.000025)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 0.0001, 100000)
        with pytest.raises(ValueError):
            lr_schedule(0, 0.0001, 0)


class TestCheckpoint:
    def build_store(self, seed=0):
        store = ParameterStore()
        rng = np.random.default_rng(seed)
        store.param("a.W", rng.normal(size=(3, 4)).astype(np.float32))
        store.param("a.b", rng.normal(size=4).astype(np.float32))
        return store

    def test_roundtrip_bytes(self, tmp_path):
        store = self.build_store()
        store.m["a.W"][:] = 0.5
        store.step_count = 17
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, store, {"kind": "test", "dims": [3, 4]})
        ckpt = load_checkpoint(p)
        assert ckpt.step_count == 17
        assert ckpt.metadata["kind"] == "test"
        np.testing.assert_array_equal(ckpt.params["a.W"], store.params["a.W"].data)
        np.testing.assert_array_equal(ckpt.m["a.W"], store.m["a.W"])

        store2 = self.build_store(seed=1)
        restore_into(store2, ckpt)
        np.testing.assert_array_equal(store2.params["a.W"].data, store.params["a.W"].data)
        assert store2.step_count == 17

    def test_shape_mismatch_rejected(self, tmp_path):
        store = self.build_store()
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, store, {})
        other = ParameterStore()
        other.param("a.W", np.zeros((5, 4), dtype=np.float32))
        other.param("a.b", np.zeros(4, dtype=np.float32))
        with pytest.raises(CheckpointShapeError):
            restore_into(other, load_checkpoint(p))

    def test_name_mismatch_rejected(self, tmp_path):
        store = self.build_store()
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, store, {})
        other = ParameterStore()
        other.param("b.W", np.zeros((3, 4), dtype=np.float32))
        with pytest.raises(CheckpointShapeError):
            restore_into(other, load_checkpoint(p))
