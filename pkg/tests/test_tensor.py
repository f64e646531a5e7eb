"""Autodiff engine: op semantics, frozen small cases, gradient properties."""
import threading

import numpy as np
import pytest

from vmt import tensor as T
from vmt.gradcheck import check_function
from vmt.tensor import GraphError, ShapeError, Tensor, new_rng, no_grad

TOL = 1e-4


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


class TestBasics:
    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_float64_arrays_kept(self):
        assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64

    def test_int_input_rejected(self):
        with pytest.raises(TypeError):
            Tensor(np.array([1, 2], dtype=np.int64))

    def test_mixed_dtypes_rejected(self):
        a = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.ones(2, dtype=np.float64))
        with pytest.raises(TypeError):
            T.add(a, b)

    def test_scalar_operand_adopts_dtype(self):
        out = Tensor(np.ones(2, dtype=np.float64)) * 2.0
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out.data, [2.0, 2.0])

    def test_broadcast_mismatch_is_shape_error(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


class TestFrozenValues:
    """Small cases worked out by hand."""

    def test_matmul_2x2_by_column(self):
        out = t64([[1.0, 2.0], [3.0, 4.0]]) @ t64([[1.0], [1.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_leaky_relu_negative_side(self):
        out = T.leaky_relu(t64([-2.0, 0.5]), slope=0.01)
        np.testing.assert_allclose(out.data, [-0.02, 0.5])

    def test_layer_norm_three_points(self):
        out = T.layer_norm(t64([1.0, 2.0, 3.0]), t64([1.0, 1.0, 1.0]), t64([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [-1.2247449, 0.0, 1.2247449], atol=1e-4)

    def test_sigmoid_and_tanh_at_zero(self):
        assert T.sigmoid(t64([0.0])).data[0] == 0.5
        assert T.tanh(t64([0.0])).data[0] == 0.0

    def test_sigmoid_saturates_finite(self):
        out = T.sigmoid(t64([1000.0, -1000.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0])

    def test_softmax_uniform_and_log2(self):
        np.testing.assert_allclose(T.softmax(t64([1.0, 1.0, 1.0])).data, [1 / 3] * 3)
        np.testing.assert_allclose(T.softmax(t64([0.0, np.log(2.0)])).data, [1 / 3, 2 / 3])

    def test_softmax_shift_invariance(self):
        x = np.array([1.0, 5.0, -2.0])
        a = T.softmax(t64(x)).data
        b = T.softmax(t64(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_log_softmax_matches_softmax(self):
        x = t64([[0.5, -1.0, 2.0]])
        np.testing.assert_allclose(np.exp(T.log_softmax(x).data), T.softmax(x).data, atol=1e-12)

    def test_conv2d_is_cross_correlation(self):
        # Asymmetric kernel: top-left tap picks x[0,0], a flipped kernel would pick x[1,1].
        x = t64(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        w = t64(np.array([[1.0, 0.0], [0.0, 0.0]]).reshape(1, 1, 2, 2))
        out = T.conv2d(x, w)
        assert out.data.reshape(()) == 1.0

    def test_conv2d_padded_sums(self):
        x = t64(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        w = t64(np.ones((1, 1, 2, 2)))
        out = T.conv2d(x, w, stride=1, padding=1)
        expect = [[1, 3, 2], [4, 10, 6], [3, 7, 4]]
        np.testing.assert_array_equal(out.data.reshape(3, 3), expect)

    def test_conv2d_strided_windows(self):
        x = t64(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        w = t64(np.ones((1, 1, 2, 2)))
        out = T.conv2d(x, w, stride=2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[10, 18], [42, 50]])

    def test_embedding_column_lookup(self):
        table = t64([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])  # 2 features, 3 ids
        out = T.embedding(table, np.array([2, 0]))
        np.testing.assert_array_equal(out.data, [[3.0, 6.0], [1.0, 4.0]])

    def test_take_along_last(self):
        x = t64([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        out = T.take_along_last(x, np.array([2, 0]))
        np.testing.assert_array_equal(out.data, [3.0, 4.0])

    def test_global_avg_pool(self):
        x = t64(np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2))
        np.testing.assert_array_equal(T.global_avg_pool(x).data, [[1.5, 5.5]])


class TestGraph:
    def test_backward_accumulates_into_grad(self):
        x = t64([2.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_shared_subexpression_sums_gradients(self):
        x = t64([3.0], requires_grad=True)
        y = x * 2.0
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_backward_twice_raises(self):
        x = t64([1.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_backward_through_consumed_subgraph_raises(self):
        x = t64([1.0], requires_grad=True)
        y = x * 2.0
        y.sum().backward()
        with pytest.raises(GraphError):
            (y * 3.0).sum().backward()

    def test_backward_needs_scalar(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_backward_without_tape_raises(self):
        with pytest.raises(GraphError):
            t64([1.0], requires_grad=True).backward()

    def test_no_grad_blocks_recording(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert y.node is None and not y.requires_grad

    def test_no_grad_is_thread_local(self):
        seen = {}

        def worker():
            seen["inner"] = T.grad_enabled()

        with no_grad():
            th = threading.Thread(target=worker)
            th.start()
            th.join()
            seen["outer"] = T.grad_enabled()
        assert seen == {"inner": True, "outer": False}

    def test_deep_chain_does_not_recurse(self):
        x = t64([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_grad_accumulates_across_graphs(self):
        x = t64([1.0], requires_grad=True)
        (x * 2.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_constant_leaves_get_no_grad(self):
        x = t64([1.0], requires_grad=True)
        c = t64([2.0])
        (x * c).sum().backward()
        assert c.grad is None


class TestGradients:
    """Central-difference checks for every differentiable op."""

    def setup_method(self):
        self.rng = new_rng(7)

    def arr(self, *shape):
        return self.rng.standard_normal(shape)

    def test_elementwise_ops(self):
        x = self.arr(3, 4)
        cases = {
            "add": lambda a, b: (a + b).sum(),
            "sub": lambda a, b: (a - b).sum(),
            "mul": lambda a, b: (a * b).mean(),
        }
        for name, fn in cases.items():
            err = check_function(fn, [x, self.arr(3, 4)])
            assert err < TOL, f"{name}: {err}"

    def test_broadcast_grads(self):
        err = check_function(lambda a, b: (a * b).sum(), [self.arr(2, 3, 4), self.arr(4)])
        assert err < TOL

    def test_scale_and_neg(self):
        err = check_function(lambda a: (-(a * 2.5) / 3.0).sum(), [self.arr(5)])
        assert err < TOL

    def test_unary_ops(self):
        # Inputs kept away from the relu kink at 0.
        x = self.arr(4, 3) + np.sign(self.arr(4, 3)) * 0.5
        cases = {
            "exp": lambda a: T.exp(a).sum(),
            "tanh": lambda a: T.tanh(a).sum(),
            "sigmoid": lambda a: T.sigmoid(a).sum(),
            "relu": lambda a: T.relu(a).sum(),
            "leaky_relu": lambda a: T.leaky_relu(a, 0.01).sum(),
        }
        for name, fn in cases.items():
            err = check_function(fn, [x])
            assert err < TOL, f"{name}: {err}"

    def test_log_grad(self):
        err = check_function(lambda a: T.log(a).sum(), [np.abs(self.arr(6)) + 0.5])
        assert err < TOL

    def test_matmul_grads(self):
        err = check_function(lambda a, b: (a @ b).sum(), [self.arr(3, 4), self.arr(4, 2)])
        assert err < TOL

    def test_matmul_batched_broadcast_grads(self):
        err = check_function(lambda a, b: (a @ b).sum(),
                             [self.arr(2, 1, 3, 4), self.arr(5, 4, 2)])
        assert err < TOL

    def test_reshape_transpose_slice(self):
        err = check_function(
            lambda a: (a.reshape(6, 2).transpose()[0, 1:4] * 2.0).sum(), [self.arr(3, 4)])
        assert err < TOL

    def test_concat_grads(self):
        err = check_function(lambda a, b: T.concat([a, b], axis=1).mean(),
                             [self.arr(2, 3), self.arr(2, 2)])
        assert err < TOL

    def test_reductions(self):
        for fn in (lambda a: a.sum(axis=0).sum(),
                   lambda a: a.mean(axis=(0, 2)).sum(),
                   lambda a: a.sum(axis=1, keepdims=True).mean(),
                   lambda a: T.global_avg_pool(a).sum()):
            err = check_function(fn, [self.arr(2, 3, 4)])
            assert err < TOL

    def test_softmax_grads(self):
        err = check_function(lambda a: (T.softmax(a, axis=-1) * T.softmax(a, axis=-1)).sum(),
                             [self.arr(3, 5)])
        assert err < TOL

    def test_log_softmax_grads(self):
        ids = np.array([1, 3, 0])
        err = check_function(lambda a: -T.take_along_last(T.log_softmax(a), ids).mean(),
                             [self.arr(3, 5)])
        assert err < TOL

    def test_layer_norm_grads(self):
        err = check_function(
            lambda x, w, b: (T.layer_norm(x, w, b) * T.layer_norm(x, w, b)).sum(),
            [self.arr(3, 6), self.arr(6), self.arr(6)])
        assert err < TOL

    def test_layer_norm_channel_axis_grads(self):
        err = check_function(lambda x, w, b: T.layer_norm(x, w, b, axis=1).sum(),
                             [self.arr(2, 4, 3, 3), self.arr(4) + 2.0, self.arr(4)])
        assert err < TOL

    def test_conv2d_grads(self):
        err = check_function(lambda x, w: T.conv2d(x, w, stride=2, padding=1).sum(),
                             [self.arr(2, 3, 6, 6), self.arr(4, 3, 4, 4)])
        assert err < TOL

    def test_conv2d_nonsquare_grads(self):
        err = check_function(lambda x, w: (T.conv2d(x, w, stride=1, padding=0)
                                           * T.conv2d(x, w, stride=1, padding=0)).sum(),
                             [self.arr(1, 2, 5, 7), self.arr(3, 2, 2, 3)])
        assert err < TOL

    def test_embedding_grads(self):
        ids = np.array([[0, 2], [2, 1]])
        err = check_function(lambda t: (T.embedding(t, ids) * 1.5).sum(), [self.arr(4, 3)])
        assert err < TOL

    def test_take_along_last_grads(self):
        ids = np.array([1, 0, 3])
        err = check_function(lambda a: T.take_along_last(a, ids).sum(), [self.arr(3, 4)])
        assert err < TOL

    def test_dropout_grads_with_frozen_mask(self):
        # Same seed on every evaluation freezes the mask, making the op smooth.
        err = check_function(lambda a: T.dropout(a, 0.4, new_rng(3)).sum(), [self.arr(8, 8)])
        assert err < TOL


class TestDropoutAndRng:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones((4, 4)))
        assert T.dropout(x, 0.0, new_rng(0)) is x

    def test_mask_scales_survivors(self):
        x = Tensor(np.ones((2000,)))
        out = T.dropout(x, 0.25, new_rng(1)).data
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert 0.70 < kept.size / 2000 < 0.80

    def test_same_seed_same_stream(self):
        a = new_rng(42).random(5)
        b = new_rng(42).random(5)
        c = new_rng(43).random(5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_tuple_seeds_derive_distinct_streams(self):
        a = new_rng((9, 0)).random(4)
        b = new_rng((9, 1)).random(4)
        assert not np.array_equal(a, b)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones(2)), 1.0, new_rng(0))
