import math

import numpy as np
import pytest

from plr.nn import ops
from plr.nn.gradcheck import GRADCHECK_OPS, grad_check


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 6, 6)).astype(np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out, _ = ops.conv2d_forward(x, w, np.zeros(1, dtype=np.float32))
        assert np.allclose(out, x)

    def test_box_sum_interior(self):
        x = np.ones((1, 1, 5, 5), dtype=np.float64)
        w = np.ones((1, 1, 3, 3), dtype=np.float64)
        out, _ = ops.conv2d_forward(x, w, np.zeros(1))
        assert out[0, 0, 2, 2] == 9.0
        assert out[0, 0, 0, 0] == 4.0  # zero padding at the corner

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ops.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), np.zeros(1))

    def test_nonfinite_rejected(self):
        x = np.full((1, 1, 3, 3), np.inf)
        w = np.ones((1, 1, 3, 3))
        with pytest.raises(FloatingPointError):
            ops.conv2d_forward(x, w, np.zeros(1))


class TestElementwise:
    def test_relu(self):
        x = np.array([[-2.0, 0.0, 3.5]])
        y, _ = ops.relu_forward(x)
        assert y.tolist() == [[0.0, 0.0, 3.5]]

    def test_maxpool_upsample_roundtrip_on_constant(self):
        x = np.full((1, 2, 4, 4), 3.25)
        pooled, _ = ops.maxpool2_forward(x)
        up, _ = ops.upsample_nearest2_forward(pooled)
        assert np.array_equal(up, x)

    def test_maxpool_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            ops.maxpool2_forward(np.zeros((1, 1, 5, 4)))

    def test_maxpool_selects_max(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        y, _ = ops.maxpool2_forward(x)
        assert y[0, 0].tolist() == [[5.0, 7.0], [13.0, 15.0]]

    def test_gap_constant(self):
        x = np.full((3, 4, 5, 5), 2.5)
        y, _ = ops.global_avg_pool_forward(x)
        assert np.allclose(y, 2.5)
        assert y.shape == (3, 4)

    def test_concat(self):
        a = np.ones((1, 2, 3, 3))
        b = np.zeros((1, 1, 3, 3))
        y, split = ops.concat_channels_forward(a, b)
        assert y.shape == (1, 3, 3, 3)
        da, db = ops.concat_channels_backward(y, split)
        assert da.shape == a.shape and db.shape == b.shape

    def test_sigmoid_range_and_stability(self):
        x = np.array([-30.0, -10.0, 0.0, 10.0, 30.0])
        y, _ = ops.sigmoid_forward(x)
        assert y[2] == 0.5
        assert (y > 0).all() and (y < 1).all()
        # extreme inputs saturate without overflowing
        y_ext, _ = ops.sigmoid_forward(np.array([-1000.0, 1000.0]))
        assert np.isfinite(y_ext).all()
        assert 0.0 <= y_ext[0] and y_ext[1] <= 1.0


class TestLosses:
    def test_mse_zero_on_equal(self):
        x = np.random.default_rng(1).standard_normal((2, 1, 4, 4))
        loss, grad = ops.mse_loss(x, x.copy())
        assert loss == 0.0
        assert np.allclose(grad, 0.0)

    def test_mse_unit(self):
        loss, grad = ops.mse_loss(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
        assert loss == 1.0
        assert grad[0, 0, 0, 0] == 2.0

    def test_mse_grad_formula(self):
        rng = np.random.default_rng(2)
        pred = rng.standard_normal((2, 1, 3, 3))
        target = rng.standard_normal((2, 1, 3, 3))
        _, grad = ops.mse_loss(pred, target)
        assert np.allclose(grad, 2.0 * (pred - target) / pred.size)

    def test_bce_half_is_ln2(self):
        for label in (0.0, 1.0):
            loss, _ = ops.bce_loss(np.array([0.5]), np.array([label]))
            assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_bce_confident_correct_near_zero(self):
        loss, _ = ops.bce_loss(np.array([1.0 - 1e-9]), np.array([1.0]))
        assert loss < 1e-6

    def test_bce_shape_mismatch(self):
        with pytest.raises(ValueError):
            ops.bce_loss(np.array([0.5, 0.5]), np.array([1.0]))


class TestGradients:
    @pytest.mark.parametrize("op", sorted(GRADCHECK_OPS))
    def test_finite_difference(self, op):
        err = grad_check(op, trials=5, seed=123)
        tol = GRADCHECK_OPS[op][1]
        assert err < tol, f"{op}: {err:.3e} >= {tol}"
