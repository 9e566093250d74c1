import numpy as np
import pytest

from seasoncast.errors import DimensionError, GraphStateError
from seasoncast.nn import (
    Tensor,
    backward,
    batchnorm_eval,
    batchnorm_train,
    concat_channels,
    conv2d_circular,
    conv2d_circular_reference,
    finite_diff_check,
    maxpool2,
    mse_loss,
    no_grad,
    pad_one,
    relu,
    upsample2,
)


def wrap_pad_loop_conv(x, w, b):
    """Independent oracle: explicit wrap pad, then a valid 3x3 convolution as
    a scalar loop accumulating taps in ascending (c_in, k_row, k_col) order."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c, h, wid = x.shape
    xp = np.empty((n, c, h + 2, wid + 2))
    xp[:, :, 1:-1, 1:-1] = x
    xp[:, :, 0, 1:-1] = x[:, :, -1, :]
    xp[:, :, -1, 1:-1] = x[:, :, 0, :]
    xp[:, :, :, 0] = xp[:, :, :, -2]
    xp[:, :, :, -1] = xp[:, :, :, 1]
    out = np.empty((n, w.shape[0], h, wid))
    for ni in range(n):
        for oi in range(w.shape[0]):
            for i in range(h):
                for j in range(wid):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(3):
                            for kj in range(3):
                                acc += w[oi, ci, ki, kj] * xp[ni, ci, i + ki, j + kj]
                    out[ni, oi, i, j] = acc + b[oi]
    return out


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = conv2d_circular(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
        assert np.allclose(out.data, x)

    def test_all_ones_kernel_constant_field(self):
        x = np.full((1, 1, 4, 4), 2.5)
        w = np.ones((1, 1, 3, 3))
        out = conv2d_circular(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
        assert np.allclose(out.data, 9 * 2.5)

    def test_left_neighbor_wraparound(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 0] = 1.0  # pick up the cell one column to the left
        out = conv2d_circular(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
        assert np.allclose(out.data.ravel(), [4.0, 1.0, 2.0, 3.0])

    def test_reference_mode_bit_exact_vs_loop_oracle(self, rng):
        for _ in range(10):
            n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            h, wd = 2 * rng.integers(1, 4), 2 * rng.integers(1, 5)
            x = rng.normal(size=(n, c, h, wd))
            w = rng.normal(size=(o, c, 3, 3))
            b = rng.normal(size=o)
            ref = conv2d_circular(Tensor(x), Tensor(w), Tensor(b), reference=True).data
            assert np.array_equal(ref, wrap_pad_loop_conv(x, w, b))

    def test_fast_path_matches_reference(self, rng):
        x = rng.normal(size=(2, 4, 6, 8))
        w = rng.normal(size=(5, 4, 3, 3))
        b = rng.normal(size=5)
        fast = conv2d_circular(Tensor(x), Tensor(w), Tensor(b)).data
        ref = conv2d_circular_reference(x, w, b)
        assert np.abs(fast - ref).max() < 1e-12

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv2d_circular(
                Tensor(rng.normal(size=(1, 2, 4, 4))),
                Tensor(rng.normal(size=(1, 3, 3, 3))),
                Tensor(np.zeros(1)),
            )

    def test_reflect_lat_mode_keeps_lon_circular(self, rng):
        x = rng.normal(size=(1, 1, 4, 6))
        w = rng.normal(size=(1, 1, 3, 3))
        b = np.zeros(1)
        out = conv2d_circular(
            Tensor(x), Tensor(w), Tensor(b), padding_mode="circular-lon-reflect-lat"
        ).data
        rolled = conv2d_circular(
            Tensor(np.roll(x, 2, axis=3)), Tensor(w), Tensor(b),
            padding_mode="circular-lon-reflect-lat",
        ).data
        assert np.array_equal(rolled, np.roll(out, 2, axis=3))

    def test_identity_kernel_backprop_passes_upstream(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d_circular(x, Tensor(w), Tensor(np.zeros(1)))
        loss = mse_loss(out, np.zeros_like(out.data))
        backward(loss)
        assert np.allclose(x.grad, 2.0 * x.data / x.data.size)


class TestPoolingAndUpsampling:
    def test_maxpool_hand_case(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        assert maxpool2(Tensor(x)).data.ravel()[0] == 4.0

    def test_maxpool_constant(self):
        x = np.full((1, 2, 4, 6), 3.3)
        out = maxpool2(Tensor(x)).data
        assert out.shape == (1, 2, 2, 3)
        assert np.all(out == 3.3)

    def test_maxpool_shape_rule(self, rng):
        out = maxpool2(Tensor(rng.normal(size=(2, 3, 24, 48)))).data
        assert out.shape == (2, 3, 12, 24)

    def test_maxpool_odd_dims_rejected(self, rng):
        with pytest.raises(DimensionError):
            maxpool2(Tensor(rng.normal(size=(1, 1, 3, 4))))

    def test_upsample_single_cell(self):
        out = upsample2(Tensor(np.array([[1.0]]).reshape(1, 1, 1, 1))).data
        assert np.array_equal(out[0, 0], np.ones((2, 2)))

    def test_upsample_shape_rule(self, rng):
        out = upsample2(Tensor(rng.normal(size=(1, 2, 12, 24)))).data
        assert out.shape == (1, 2, 24, 48)

    def test_pool_of_upsample_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 5, 7))
        assert np.array_equal(maxpool2(upsample2(Tensor(x))).data, x)


class TestReluAndLoss:
    def test_relu_values(self):
        out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_relu_all_negative(self):
        assert np.all(relu(Tensor(np.full((3, 3), -4.0))).data == 0.0)

    def test_relu_idempotent(self, rng):
        x = rng.normal(size=(4, 4))
        once = relu(Tensor(x)).data
        assert np.array_equal(relu(Tensor(once)).data, once)

    def test_relu_grad_at_negative_is_zero(self):
        x = Tensor(np.array([[-1.0]]), requires_grad=True)
        loss = mse_loss(relu(x), np.array([[1.0]]))
        backward(loss)
        assert np.all(x.grad == 0.0)

    def test_mse_identity(self, rng):
        x = rng.normal(size=(2, 2))
        assert float(mse_loss(Tensor(x), x).data) == 0.0

    def test_mse_unit_offset(self):
        assert float(mse_loss(Tensor(np.ones((3, 4))), np.zeros((3, 4))).data) == 1.0

    def test_mse_hand_case(self):
        val = mse_loss(Tensor(np.array([0.0, 2.0])), np.zeros(2)).data
        assert float(val) == 2.0  # (0 + 4) / 2

    def test_scalar_mse_gradient(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        loss = mse_loss(x, np.array(0.0))
        backward(loss)
        assert float(x.grad) == 6.0  # d(x^2)/dx at 3

    def test_mse_strictly_positive_unless_equal(self, rng):
        a = rng.normal(size=(3, 3))
        b = a.copy()
        b[0, 0] += 1e-3
        assert float(mse_loss(Tensor(a), b).data) > 0.0

    def test_backward_without_forward_raises(self):
        with pytest.raises(GraphStateError):
            backward(Tensor(np.array(1.0), requires_grad=True))

    def test_no_grad_suppresses_recording(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
        with no_grad():
            out = relu(x)
        assert out._backward_fn is None


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = rng.normal(5.0, 2.0, size=(8, 3, 4, 4))
        out, _, _ = batchnorm_train(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-5)
        got = out.data
        assert np.abs(got.mean(axis=(0, 2, 3))).max() < 1e-10
        assert np.abs(got.var(axis=(0, 2, 3)) - 1.0).max() < 1e-3  # epsilon effect

    def test_affine_applies_after_standardizing(self, rng):
        x = rng.normal(size=(16, 2, 3, 3))
        out, _, _ = batchnorm_train(
            Tensor(x), Tensor(np.full(2, 2.0)), Tensor(np.full(2, 3.0)), 1e-12
        )
        assert np.abs(out.data.mean(axis=(0, 2, 3)) - 3.0).max() < 1e-9
        assert np.abs(out.data.std(axis=(0, 2, 3)) - 2.0).max() < 1e-6

    def test_eval_mode_formula(self, rng):
        x = rng.normal(size=(2, 2, 2, 2))
        eps = 1e-5
        out = batchnorm_eval(
            Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
            np.zeros(2), np.ones(2), eps,
        )
        assert np.allclose(out.data, x / np.sqrt(1.0 + eps), rtol=0, atol=1e-15)

    def test_running_stat_means(self, rng):
        x = rng.normal(7.0, 3.0, size=(32, 1, 8, 8))
        _, mean64, var64 = batchnorm_train(
            Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), 1e-5
        )
        assert mean64[0] == pytest.approx(x.mean(), rel=1e-12)
        assert var64[0] == pytest.approx(x.var(), rel=1e-9)


class TestGradients:
    def test_conv_gradcheck(self, rng):
        x = rng.normal(size=(2, 2, 4, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        target = rng.normal(size=(2, 3, 4, 6))
        err = finite_diff_check(
            lambda xt, wt, bt: mse_loss(conv2d_circular(xt, wt, bt), target), [x, w, b]
        )
        assert err < 1e-6

    def test_batchnorm_gradcheck(self, rng):
        x = rng.normal(size=(3, 2, 3, 4))
        g = rng.uniform(0.5, 1.5, size=2)
        be = rng.normal(size=2)
        target = rng.normal(size=(3, 2, 3, 4))

        def f(xt, gt, bt):
            out, _, _ = batchnorm_train(xt, gt, bt, 1e-5)
            return mse_loss(out, target)

        assert finite_diff_check(f, [x, g, be]) < 1e-5

    def test_concat_and_upsample_gradcheck(self, rng):
        a = rng.normal(size=(1, 2, 2, 3))
        b = rng.normal(size=(1, 1, 4, 6))
        target = rng.normal(size=(1, 3, 4, 6))

        def f(at, bt):
            return mse_loss(concat_channels([upsample2(at), bt]), target)

        assert finite_diff_check(f, [a, b]) < 1e-8

    def test_fanout_accumulates(self, rng):
        # the same tensor consumed twice must receive the sum of both paths
        x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
        out = concat_channels([x, x])
        loss = mse_loss(out, np.zeros_like(out.data))
        backward(loss)
        expected = 2.0 * np.concatenate([x.data, x.data], axis=1) / 8.0
        assert np.allclose(x.grad, expected[:, :1] + expected[:, 1:])


def test_pad_one_wrap_matches_manual(rng):
    x = rng.normal(size=(1, 1, 3, 4))
    xp = pad_one(x)
    assert xp.shape == (1, 1, 5, 6)
    assert np.array_equal(xp[0, 0, 0, 1:-1], x[0, 0, -1])
    assert np.array_equal(xp[0, 0, -1, 1:-1], x[0, 0, 0])
    assert np.array_equal(xp[0, 0, 1:-1, 0], x[0, 0, :, -1])
    assert np.array_equal(xp[0, 0, 1:-1, -1], x[0, 0, :, 0])
