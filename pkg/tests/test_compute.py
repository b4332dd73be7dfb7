import threading

import numpy as np
import pytest

from mttrack.compute import ops
from mttrack.compute.gradcheck import grad_check
from mttrack.compute.tensor import Tensor, no_grad
from mttrack.core.exceptions import ContractError, DimensionError


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = rand(rng, 3, 4)
        x.requires_grad = True
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_detached_input_gets_no_grad(self, rng):
        x = rand(rng, 3)
        x.requires_grad = True
        y = x.detach()
        ops.sum(y).backward()
        assert x.grad is None

    def test_non_scalar_loss_is_rejected(self, rng):
        x = rand(rng, 2, 2)
        x.requires_grad = True
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_repeated_backward_accumulates(self, rng):
        x = rand(rng, 4)
        x.requires_grad = True
        loss = ops.sum(ops.mul(x, x))
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(x.grad, 4.0 * x.data)

    def test_shared_subexpression_counted_once_per_path(self, rng):
        x = rand(rng, 3)
        x.requires_grad = True
        y = x * 3.0
        ops.sum(y + y).backward()
        np.testing.assert_allclose(x.grad, np.full(3, 6.0))

    def test_no_grad_records_nothing(self, rng):
        x = rand(rng, 3)
        x.requires_grad = True
        with no_grad():
            y = ops.relu(x)
        assert not y.requires_grad
        assert y.is_leaf


class TestGradCheck:
    def test_sum_has_zero_error(self, rng):
        assert grad_check(lambda t: ops.sum(t), rand(rng, 3, 3)) < 1e-8

    def test_constant_function_has_zero_error(self, rng):
        assert grad_check(lambda t: ops.mul(ops.sum(t), 0.0), rand(rng, 4)) == 0.0

    def test_matmul_softmax_composite(self, rng):
        a, b = rand(rng, 4, 3), rand(rng, 3, 5)
        weights = rng.standard_normal((4, 5))
        err = grad_check(lambda xs: ops.sum(ops.mul(ops.softmax(xs[0] @ xs[1], axis=-1), weights)), [a, b])
        assert err <= 1e-4

    @pytest.mark.parametrize(
        "build",
        [
            lambda rng: (lambda xs: ops.sum(ops.mul(ops.sigmoid(xs[0]), 2.0)), [Tensor(rng.standard_normal((3, 4)))]),
            lambda rng: (lambda xs: ops.sum(ops.layer_norm(*xs) * xs[0]), [Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal(8)), Tensor(rng.standard_normal(8))]),
            lambda rng: (lambda xs: ops.sum(ops.mul(ops.conv2d(xs[0], xs[1], xs[2], stride=2, padding=1), 1.5)), [Tensor(rng.standard_normal((7, 7, 2))), Tensor(rng.standard_normal((3, 3, 2, 3))), Tensor(rng.standard_normal(3))]),
            lambda rng: (lambda xs: ops.sum(ops.mul(ops.depthwise_xcorr(*xs), xs[1][:5, :5])), [Tensor(rng.standard_normal((4, 4, 3))), Tensor(rng.standard_normal((8, 8, 3)))]),
            lambda rng: (lambda xs: ops.sum(ops.mul(ops.global_avg_pool(ops.concat(xs, axis=2)), np.arange(4.0))), [Tensor(rng.standard_normal((3, 3, 2))), Tensor(rng.standard_normal((3, 3, 2)))]),
            lambda rng: (lambda xs: ops.sum(ops.bce_with_logits(xs[0], np.array([[1.0, 0.0], [0.0, 1.0]]))), [Tensor(rng.standard_normal((2, 2)))]),
        ],
        ids=["sigmoid", "layer_norm", "conv2d", "depthwise_xcorr", "gap_concat", "bce"],
    )
    def test_differentiable_ops(self, rng, build):
        f, inputs = build(rng)
        assert grad_check(f, inputs) <= 1e-4

    def test_grad_check_restores_inputs(self, rng):
        x = rand(rng, 3, 3)
        before = x.data.copy()
        grad_check(lambda t: ops.sum(ops.sigmoid(t)), x)
        np.testing.assert_array_equal(x.data, before)


class TestOracles:
    def test_conv2d_matches_loop(self, rng):
        x, k, b = rng.standard_normal((9, 7, 3)), rng.standard_normal((3, 3, 3, 4)), rng.standard_normal(4)
        out = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        ho, wo = (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1
        expected = np.zeros((ho, wo, 4))
        for i in range(ho):
            for j in range(wo):
                for o in range(4):
                    expected[i, j, o] = np.sum(xp[2 * i:2 * i + 3, 2 * j:2 * j + 3, :] * k[:, :, :, o]) + b[o]
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_matmul_matches_loop(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        expected = np.array([[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, expected, atol=1e-10)

    def test_global_avg_pool_matches_loop(self, rng):
        x = rng.standard_normal((4, 5, 3))
        expected = [sum(x[i, j, c] for i in range(4) for j in range(5)) / 20 for c in range(3)]
        np.testing.assert_allclose(ops.global_avg_pool(Tensor(x)).data, expected, atol=1e-10)

    def test_depthwise_xcorr_matches_sliding_window(self, rng):
        t, s = rng.standard_normal((8, 8, 4)), rng.standard_normal((16, 16, 4))
        out = ops.depthwise_xcorr(Tensor(t), Tensor(s)).data
        expected = np.zeros((9, 9, 4))
        for i in range(9):
            for j in range(9):
                expected[i, j] = np.sum(s[i:i + 8, j:j + 8] * t, axis=(0, 1))
        np.testing.assert_allclose(out, expected, atol=1e-10)


class TestProperties:
    def test_softmax_rows_sum_to_one(self, rng):
        p = ops.softmax(Tensor(rng.standard_normal((5, 7)) * 30), axis=-1).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_sigmoid_open_interval(self, rng):
        y = ops.sigmoid(Tensor(rng.uniform(-20, 20, size=100))).data
        assert np.all(y > 0) and np.all(y < 1)

    def test_ops_do_not_mutate_inputs(self, rng):
        a, b = rand(rng, 4, 4), rand(rng, 4, 4)
        snapshot = (a.data.copy(), b.data.copy())
        a.requires_grad = True
        out = ops.layer_norm(ops.softmax(a @ b), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        ops.sum(ops.relu(out - b)).backward()
        np.testing.assert_array_equal(a.data, snapshot[0])
        np.testing.assert_array_equal(b.data, snapshot[1])

    def test_chunk_splits_halves(self):
        first, second = ops.chunk(Tensor(np.arange(6.0)), 2, axis=0)
        np.testing.assert_array_equal(first.data, [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(second.data, [3.0, 4.0, 5.0])

    def test_shape_errors(self, rng):
        with pytest.raises(DimensionError):
            rand(rng, 2, 3) @ rand(rng, 2, 3)
        with pytest.raises(DimensionError):
            ops.depthwise_xcorr(rand(rng, 5, 5, 2), rand(rng, 4, 4, 2))
        with pytest.raises(DimensionError):
            ops.chunk(rand(rng, 5), 2, axis=0)


class TestInstrumentation:
    def test_matmul_counter(self, rng):
        a = rand(rng, 2, 2)
        with ops.count_matmuls() as counter:
            a @ a
            a @ a @ a
        assert counter.count == 3

    def test_counter_is_thread_local(self, rng):
        a = rand(rng, 2, 2)
        other = threading.Thread(target=lambda: [a @ a for _ in range(5)])
        with ops.count_matmuls() as counter:
            other.start()
            other.join()
            a @ a
        assert counter.count == 1

    def test_injected_softmax_fault_breaks_normalisation(self, rng):
        x = rand(rng, 3, 4)
        with ops.inject_fault("softmax"):
            corrupted = ops.softmax(x).data.sum(axis=-1)
        np.testing.assert_allclose(corrupted, 1.05)
        np.testing.assert_allclose(ops.softmax(x).data.sum(axis=-1), 1.0)
