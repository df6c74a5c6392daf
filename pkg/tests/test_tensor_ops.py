"""Forward-pass contracts of the tensor ops, checked against naive oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from videograph import tensor as tz
from videograph.tensor import BatchNormState, ShapeError, Tensor


def naive_matmul(a, b):
    m, k = a.shape
    k2, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def naive_conv1d_same(x, kernel):
    """Zero-padded same convolution of a 1-D signal with one kernel."""
    k = len(kernel)
    pad = k // 2
    padded = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    return np.array([sum(padded[i + j] * kernel[j] for j in range(k)) for i in range(len(x))])


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = tz.matmul(Tensor(a), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a)

    def test_against_triple_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0], [6.0]])
        out = tz.matmul(Tensor(a), Tensor(b))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])
        np.testing.assert_allclose(out.data, naive_matmul(a, b), rtol=0, atol=0)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_random_against_oracle(self, m, k, p, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, p))
        out = tz.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, naive_matmul(a, b), atol=1e-12)

    def test_similarity_shape_at_full_scale(self):
        # flattened 7x7 grid of 1024-channel features against 128 latent nodes
        a = Tensor(np.zeros((49, 1024)))
        b = Tensor(np.zeros((1024, 128)))
        assert tz.matmul(a, b).shape == (49, 128)

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            tz.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestDepthwiseConv:
    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 4, 3))
        kernels = np.tile([0.0, 1.0, 0.0], (3, 1))
        out = tz.depthwise_conv1d(Tensor(x), 0, Tensor(kernels))
        np.testing.assert_array_equal(out.data, x)

    def test_box_kernel_matches_naive(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(3, 1)
        out = tz.depthwise_conv1d(Tensor(x), 0, Tensor(np.array([[1.0, 1.0, 1.0]])))
        np.testing.assert_array_equal(out.data.ravel(), [3.0, 6.0, 5.0])

    @given(st.integers(1, 9), st.integers(1, 3), st.sampled_from([3, 5, 7]), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_random_against_naive_per_channel(self, length, channels, k, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(length, channels))
        kernels = rng.normal(size=(channels, k))
        out = tz.depthwise_conv1d(Tensor(x), 0, Tensor(kernels))
        for c in range(channels):
            np.testing.assert_allclose(out.data[:, c], naive_conv1d_same(x[:, c], kernels[c]),
                                       atol=1e-12)

    def test_time_kernel_preserves_length(self):
        x = Tensor(np.zeros((64, 4, 8)))
        out = tz.depthwise_conv1d(x, 0, Tensor(np.zeros((8, 7))))
        assert out.shape == (64, 4, 8)

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            tz.depthwise_conv1d(Tensor(np.zeros((4, 2))), 0, Tensor(np.zeros((2, 4))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="channel"):
            tz.depthwise_conv1d(Tensor(np.zeros((4, 2))), 0, Tensor(np.zeros((3, 3))))

    @given(st.integers(0, 10**6))
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 6, 3))
        kernels = Tensor(rng.normal(size=(3, 5)))
        a, b = rng.normal(size=2)
        lhs = tz.depthwise_conv1d(Tensor(a * x + b * y), 0, kernels).data
        rhs = (a * tz.depthwise_conv1d(Tensor(x), 0, kernels).data
               + b * tz.depthwise_conv1d(Tensor(y), 0, kernels).data)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert tz.activation(Tensor(np.zeros(1)), "sigmoid").data[0] == 0.5

    def test_relu_negative(self):
        assert tz.activation(Tensor(np.array([-1.0])), "relu").data[0] == 0.0

    def test_sigmoid_direct_evaluation(self):
        out = tz.activation(Tensor(np.array([10.0])), "sigmoid").data[0]
        np.testing.assert_allclose(out, 1.0 / (1.0 + np.exp(-10.0)), atol=1e-15)
        np.testing.assert_allclose(out, 0.9999546, atol=1e-7)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            tz.activation(Tensor(np.zeros(1)), "gelu")


class TestSoftmax:
    def test_constant_vector_uniform(self):
        out = tz.softmax(Tensor(np.full((1, 5), 3.7)), axis=1)
        np.testing.assert_allclose(out.data, 0.2, atol=1e-15)

    def test_closed_form(self):
        out = tz.softmax(Tensor(np.array([[0.0, np.log(2.0)]])), axis=1)
        np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-15)

    @given(st.integers(1, 6), st.integers(0, 10**6),
           st.floats(-50, 50, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, k, seed, shift):
        x = np.random.default_rng(seed).normal(size=(3, k))
        out = tz.softmax(Tensor(x), axis=1).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        shifted = tz.softmax(Tensor(x + shift), axis=1).data
        np.testing.assert_allclose(shifted, out, atol=1e-9)


class TestBatchNorm:
    def test_constant_input_maps_to_zero(self):
        state = BatchNormState(3)
        x = Tensor(np.full((8, 3), 2.5))
        out = tz.batch_norm(x, 1, state, "train")
        assert np.abs(out.data).max() <= 1e-2

    def test_standardized_input_passes_through(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 2))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        state = BatchNormState(2)
        out = tz.batch_norm(Tensor(x), 1, state, "train")
        np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + state.eps), rtol=1e-6)

    def test_affine_only(self):
        state = BatchNormState(2)
        state.gamma = Tensor(np.zeros(2), requires_grad=True)
        state.beta = Tensor(np.full(2, 5.0), requires_grad=True)
        out = tz.batch_norm(Tensor(np.random.default_rng(1).normal(size=(6, 2))), 1, state, "train")
        np.testing.assert_array_equal(out.data, np.full((6, 2), 5.0))

    def test_eval_before_train_rejected(self):
        state = BatchNormState(2)
        with pytest.raises(RuntimeError, match="uninitialized"):
            tz.batch_norm(Tensor(np.zeros((4, 2))), 1, state, "eval")

    @given(st.integers(0, 10**6))
    @settings(max_examples=20, deadline=None)
    def test_train_mode_standardizes(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(loc=rng.normal(), scale=1 + rng.uniform(), size=(50, 4, 3))
        state = BatchNormState(3)
        out = tz.batch_norm(Tensor(x), 2, state, "train").data
        assert np.abs(out.mean(axis=(0, 1))).max() <= 1e-6
        np.testing.assert_allclose(out.var(axis=(0, 1)), 1.0, atol=1e-3)


class TestMaxPool:
    def test_constant_tensor(self):
        out = tz.max_pool(Tensor(np.full((9, 6), 4.0)), (0, 1))
        assert out.shape == (3, 2)
        np.testing.assert_array_equal(out.data, np.full((3, 2), 4.0))

    def test_one_to_nine(self):
        out = tz.max_pool(Tensor(np.arange(1.0, 10.0)), (0,))
        np.testing.assert_array_equal(out.data, [3.0, 6.0, 9.0])

    def test_floor_division_lengths(self):
        out = tz.max_pool(Tensor(np.zeros((64, 128, 2))), (0, 1))
        assert out.shape == (21, 42, 2)

    def test_short_axis_rejected(self):
        with pytest.raises(ShapeError, match="length 2"):
            tz.max_pool(Tensor(np.zeros((2, 9))), (0, 1))

    @given(st.integers(3, 12), st.integers(3, 12), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_outputs_are_window_elements(self, t_len, n_len, seed):
        x = np.random.default_rng(seed).normal(size=(t_len, n_len))
        out = tz.max_pool(Tensor(x), (0, 1)).data
        assert out.max() <= x.max()
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                window = x[3 * i:3 * i + 3, 3 * j:3 * j + 3]
                assert out[i, j] == window.max()


class TestLoss:
    def test_perfect_prediction(self):
        pred = np.array([[1.0, 0.0, 0.0]])
        out = tz.loss(Tensor(pred), [0], "single_label_ce")
        assert out.item() <= 1e-6

    def test_uniform_prediction_is_log_k(self):
        k = 7
        pred = np.full((4, k), 1.0 / k)
        out = tz.loss(Tensor(pred), [0, 1, 2, 3], "single_label_ce")
        np.testing.assert_allclose(out.item(), np.log(k), atol=1e-12)

    def test_bce_at_half_is_log_two(self):
        pred = np.full((3, 5), 0.5)
        targets = np.random.default_rng(0).integers(0, 2, size=(3, 5))
        out = tz.loss(Tensor(pred), targets, "multi_label_bce")
        np.testing.assert_allclose(out.item(), np.log(2.0), atol=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError, match="out of range"):
            tz.loss(Tensor(np.full((1, 3), 1 / 3)), [3], "single_label_ce")


class TestTensorInvariants:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Tensor(np.array([1.0, np.nan]))

    def test_grad_accumulates(self):
        x = Tensor(np.ones(3), requires_grad=True)
        x.accumulate_grad(np.full(3, 2.0))
        x.accumulate_grad(np.full(3, 0.5))
        np.testing.assert_array_equal(x.grad, np.full(3, 2.5))

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with tz.Tape() as tape:
            y = tz.mul(x, x)
            with pytest.raises(ShapeError, match="scalar"):
                tape.backward(y)
