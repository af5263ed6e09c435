import numpy as np
import pytest

from ubp.errors import ConfigurationError, UsageError
from ubp.neural.tensor import (Tensor, avg_pool1d, concatenate, conv1d,
                               dropout)

from helpers import central_difference_check


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestElementwiseOps:
    def test_add_broadcast_gradients(self):
        rng = np.random.default_rng(0)
        a = leaf(rng, 4, 5)
        b = leaf(rng, 5)
        central_difference_check(lambda: ((a + b) * (a + b)).sum(), [a, b],
                                 n_probes=40, rng=rng)

    def test_mul_div_pow(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        central_difference_check(lambda: (a * b / (a + b) + a ** 2.0).sum(),
                                 [a, b], n_probes=40, rng=rng)

    def test_exp_log_tanh(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.uniform(0.2, 3.0, (6,)), requires_grad=True)
        central_difference_check(
            lambda: (a.exp().log() + a.tanh()).sum(), [a], n_probes=30, rng=rng)

    def test_relu_values_and_gradient(self):
        x = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
        out = x.relu()
        np.testing.assert_array_equal(out.data, [0, 0, 0.5, 3.0])
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 0, 1, 1])

    def test_clip_gradient_gates(self):
        x = Tensor(np.array([-12.0, -3.0, 0.0, 3.0, 12.0]), requires_grad=True)
        out = x.clip(-10, 10)
        np.testing.assert_array_equal(out.data, [-10, -3, 0, 3, 10])
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 1, 1, 1, 0])


class TestMatmul:
    def test_2d_gradients(self):
        rng = np.random.default_rng(3)
        a, b = leaf(rng, 4, 6), leaf(rng, 6, 3)
        central_difference_check(lambda: (a @ b).sum(), [a, b], n_probes=40,
                                 rng=rng)

    def test_3d_by_2d_gradients(self):
        rng = np.random.default_rng(4)
        a, b = leaf(rng, 2, 5, 4), leaf(rng, 4, 3)
        central_difference_check(lambda: ((a @ b) ** 2.0).sum(), [a, b],
                                 n_probes=40, rng=rng)

    def test_matches_numpy(self):
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((7, 3)), rng.standard_normal((3, 2))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b)


class TestReductionsAndShape:
    def test_sum_axis_keepdims(self):
        rng = np.random.default_rng(6)
        a = leaf(rng, 3, 4, 5)
        central_difference_check(
            lambda: (a.sum(axis=1, keepdims=True) * a).sum(), [a],
            n_probes=30, rng=rng)

    def test_mean_matches_numpy(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 6))
        assert np.isclose(Tensor(x).mean().item(), x.mean())
        np.testing.assert_allclose(Tensor(x).mean(axis=0).data, x.mean(axis=0))

    def test_reshape_and_getitem(self):
        rng = np.random.default_rng(8)
        a = leaf(rng, 4, 6)
        central_difference_check(
            lambda: (a.reshape(2, 12)[:, 3:9] ** 2.0).sum(), [a],
            n_probes=30, rng=rng)

    def test_getitem_advanced_indexing(self):
        a = Tensor(np.arange(10.0), requires_grad=True)
        idx = np.array([1, 1, 3])
        out = a[idx].sum()
        out.backward()
        expected = np.zeros(10)
        expected[1] = 2.0
        expected[3] = 1.0
        np.testing.assert_array_equal(a.grad, expected)

    def test_concatenate(self):
        rng = np.random.default_rng(9)
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 4)
        central_difference_check(
            lambda: (concatenate([a, b], axis=1) ** 2.0).sum(), [a, b],
            n_probes=30, rng=rng)


class TestBackwardContract:
    def test_backward_requires_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            (a * 2).backward()

    def test_backward_requires_graph(self):
        with pytest.raises(UsageError):
            Tensor(np.ones(1)).backward()

    def test_gradient_accumulates_across_uses(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        ((a * a) + a).backward()   # d/da (a^2 + a) = 2a + 1 = 5
        np.testing.assert_allclose(a.grad, [5.0])

    def test_diamond_graph_no_aliasing(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        b = a + a                 # both parents are the same tensor
        (b * b).backward()        # d/da (2a)^2 = 8a = 24
        np.testing.assert_allclose(a.grad, [24.0])


class TestConv1d:
    @pytest.mark.parametrize("channels,kernel", [(3, 7), (8, 5), (48, 5)])
    def test_matches_direct_convolution(self, channels, kernel):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 12, channels))
        w = rng.standard_normal((kernel, channels, 4))
        b = rng.standard_normal(4)
        out = conv1d(Tensor(x), Tensor(w), Tensor(b)).data
        pad = (kernel - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        expected = np.zeros((2, 12, 4))
        for n in range(2):
            for f in range(12):
                for o in range(4):
                    acc = b[o]
                    for k in range(kernel):
                        acc += xp[n, f + k] @ w[k, :, o]
                    expected[n, f, o] = acc
        np.testing.assert_allclose(out, expected, atol=1e-10)

    @pytest.mark.parametrize("channels,kernel", [(3, 7), (20, 5)])
    def test_gradients_both_paths(self, channels, kernel):
        rng = np.random.default_rng(11)
        x = leaf(rng, 2, 10, channels)
        w = leaf(rng, kernel, channels, 3)
        b = leaf(rng, 3)
        central_difference_check(
            lambda: (conv1d(x, w, b) ** 2.0).sum(), [x, w, b],
            n_probes=60, rng=rng)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            conv1d(Tensor(np.ones((1, 5, 2))), Tensor(np.ones((4, 2, 1))),
                   Tensor(np.zeros(1)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            conv1d(Tensor(np.ones((1, 5, 3))), Tensor(np.ones((3, 2, 1))),
                   Tensor(np.zeros(1)))


class TestAvgPool:
    def test_matches_mean_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 7, 3))
        out = avg_pool1d(Tensor(x), 2).data
        expected = np.stack([x[:, 0:6:2], x[:, 1:6:2]]).mean(axis=0)
        np.testing.assert_allclose(out, expected)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = leaf(rng, 2, 9, 4)
        central_difference_check(
            lambda: (avg_pool1d(x, 3) ** 2.0).sum(), [x], n_probes=40, rng=rng)

    def test_too_wide_rejected(self):
        with pytest.raises(ConfigurationError):
            avg_pool1d(Tensor(np.ones((1, 3, 2))), 5)


class TestDropout:
    def test_zero_probability_is_identity(self):
        x = Tensor(np.ones((4, 5)))
        out = dropout(x, 0.0, np.random.default_rng(0))
        assert out is x

    def test_deterministic_for_fixed_seed(self):
        x = Tensor(np.ones((200,)))
        a = dropout(x, 0.4, np.random.default_rng(33)).data
        b = dropout(x, 0.4, np.random.default_rng(33)).data
        np.testing.assert_array_equal(a, b)

    def test_inverted_scaling_expectation(self):
        # E[mask * x] == x within 1%, averaged over 10^5 independent masks
        rng = np.random.default_rng(1)
        n = 100_000
        x = Tensor(np.full((n, 64), 2.0))
        sampled = dropout(x, 0.3, rng).data.mean(axis=0)
        np.testing.assert_allclose(sampled, 2.0, rtol=0.01)

    def test_gradient_uses_same_mask(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        out = dropout(x, 0.5, np.random.default_rng(3))
        out.sum().backward()
        np.testing.assert_array_equal((x.grad > 0), (out.data > 0))

    def test_invalid_probability_rejected(self):
        with pytest.raises(ConfigurationError):
            dropout(Tensor(np.ones(3)), 1.0, np.random.default_rng(0))
