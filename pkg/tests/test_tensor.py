import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aimsan.tensor import (ShapeError, Tensor, concat, dilated_causal_conv,
                           finite_diff_check, pointwise_conv)


def t64(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = Tensor([[1.0, 0], [0, 1]]) @ Tensor([[5.0, 6], [7, 8]])
        np.testing.assert_allclose(out.data, [[5, 6], [7, 8]])

    def test_hand_dot_product(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_zeros(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal((a @ Tensor(np.zeros((3, 4)))).data, 0.0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


class TestDilatedCausalConv:
    def test_hand_example_dilation_2(self):
        x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 1, 4))
        w = Tensor(np.array([0.5, 0.5]).reshape(1, 1, 1, 2))
        out = dilated_causal_conv(x, w, 2)
        np.testing.assert_allclose(out.data.ravel(), [2.0, 3.0])

    def test_unit_filter_is_identity(self):
        x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4, 7)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        for d in (1, 2, 5):
            np.testing.assert_allclose(dilated_causal_conv(x, w, d).data, x.data)

    def test_dilation_schedule_collapses_to_one(self):
        x = Tensor(np.random.default_rng(2).standard_normal((1, 1, 2, 12)))
        w = Tensor(np.ones((1, 1, 1, 2)))
        expected = [10, 8, 6, 4, 2, 1]
        for d, n in zip([2, 2, 2, 2, 2, 1], expected):
            x = dilated_causal_conv(x, w, d)
            assert x.shape[3] == n

    def test_too_short_raises(self):
        x = Tensor(np.zeros((1, 1, 1, 3)))
        w = Tensor(np.zeros((1, 1, 1, 2)))
        with pytest.raises(ShapeError, match="temporal"):
            dilated_causal_conv(x, w, 3)

    @given(t=st.integers(2, 20), d=st.integers(1, 5), k=st.integers(1, 4))
    @settings(max_examples=40, deadline=None)
    def test_output_length_rule(self, t, d, k):
        if t - d * (k - 1) < 1:
            return
        x = Tensor(np.zeros((1, 1, 1, t)))
        w = Tensor(np.zeros((1, 1, 1, k)))
        assert dilated_causal_conv(x, w, d).shape[3] == t - d * (k - 1)


class TestPointwiseConv:
    def test_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 5)))
        out = pointwise_conv(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, x.data)

    def test_affine_value(self):
        x = Tensor(np.full((1, 1, 2, 2), 2.0))
        out = pointwise_conv(x, Tensor([[3.0]]), Tensor([1.0]))
        np.testing.assert_allclose(out.data, 7.0)

    def test_shape_rule(self):
        x = Tensor(np.zeros((1, 2, 4, 12)))
        out = pointwise_conv(x, Tensor(np.zeros((48, 2))), Tensor(np.zeros(48)))
        assert out.shape == (1, 48, 4, 12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channel"):
            pointwise_conv(Tensor(np.zeros((1, 3, 2, 2))),
                           Tensor(np.zeros((4, 2))))


class TestActivations:
    def test_fixed_points(self):
        assert Tensor(0.0).tanh().item() == 0.0
        assert Tensor(0.0).sigmoid().item() == 0.5
        assert Tensor(-3.0).relu().item() == 0.0

    def test_tanh_reference_value(self):
        assert Tensor(1.0, dtype=np.float64).tanh().item() == pytest.approx(
            0.761594, abs=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            Tensor(1.0).activation("softplus")


class TestConcat:
    def test_axis1(self):
        out = concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
        np.testing.assert_allclose(out.data, [[1, 3], [2, 4]])

    def test_single_part_identity(self):
        x = Tensor(np.arange(4.0))
        assert concat([x], axis=0) is x

    def test_channel_shape_rule(self):
        a = Tensor(np.zeros((1, 32, 3, 5)))
        b = Tensor(np.zeros((1, 48, 3, 5)))
        assert concat([a, b], axis=1).shape == (1, 80, 3, 5)

    def test_ragged_raises(self):
        with pytest.raises(ShapeError, match="ragged"):
            concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2)))], axis=1)

    def test_gradient_splits_to_slices(self, rng):
        a = t64(rng.standard_normal((2, 3)))
        b = t64(rng.standard_normal((2, 2)))
        weight = rng.standard_normal((2, 5))
        out = concat([a, b], axis=1)
        (out * Tensor(weight)).sum().backward()
        np.testing.assert_allclose(a.grad, weight[:, :3])
        np.testing.assert_allclose(b.grad, weight[:, 3:])


class TestMeanAxis:
    def test_two_point_mean(self):
        np.testing.assert_allclose(
            Tensor([[2.0], [4.0]]).mean_axis(0).data, [3.0])

    def test_singleton_squeeze(self):
        x = Tensor(np.arange(6.0).reshape(2, 1, 3))
        out = x.mean_axis(1)
        assert out.shape == (2, 3)
        np.testing.assert_allclose(out.data, x.data[:, 0, :])

    def test_vector(self):
        assert Tensor([1.0, 2.0, 3.0]).mean_axis(0).item() == 2.0


class TestBackward:
    def test_sum_grads_ones(self):
        x = t64([1.0, 2.0, 3.0])
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square(self):
        x = t64([2.0])
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_detached_has_no_grad(self):
        x = Tensor([1.0, 2.0])
        y = t64([3.0, 4.0])
        (x * y).sum().backward()
        assert x.grad is None
        assert y.grad is not None

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            t64([1.0, 2.0]).backward()

    def test_fanout_accumulates(self):
        x = t64([3.0])
        (x + x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [3.0])

    def test_deterministic_across_rebuilds(self):
        def build():
            rng = np.random.default_rng(42)
            x = t64(rng.standard_normal((4, 4)))
            w = t64(rng.standard_normal((4, 4)))
            ((x @ w).tanh() * x).sum().backward()
            return x.grad.copy(), w.grad.copy()
        g1, g2 = build(), build()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


class TestFiniteDiff:
    def test_sum_exact(self, rng):
        x = t64(rng.standard_normal(5))
        assert finite_diff_check(lambda x: x.sum(), [x]) < 1e-10

    def test_tanh(self, rng):
        x = t64(rng.uniform(-1, 1, 6))
        assert finite_diff_check(lambda x: x.tanh().sum(), [x]) < 1e-6

    def test_requires_float64(self):
        x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(ValueError, match="float64"):
            finite_diff_check(lambda x: x.sum(), [x])
