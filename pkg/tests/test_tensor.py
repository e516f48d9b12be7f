import numpy as np
import pytest
from hypothesis import given, strategies as st

from drgrade import tensor
from drgrade.errors import ShapeError

from helpers import naive_matmul


class TestTensorNew:
    def test_zero_fill(self):
        t = tensor.tensor_new((2, 2), 0.0)
        assert t.dtype == np.float32
        np.testing.assert_array_equal(t, [[0, 0], [0, 0]])

    def test_paper_input_extent(self):
        t = tensor.tensor_new((1, 256, 256, 1), 1.0)
        assert t.size == 65536
        assert (t == 1.0).all()

    def test_constant_fill(self):
        np.testing.assert_array_equal(tensor.tensor_new((3,), -1.5), [-1.5] * 3)

    @pytest.mark.parametrize("bad", [(), (0,), (2, -1), (1, 2, 3, 4, 5)])
    def test_invalid_shapes(self, bad):
        with pytest.raises(ShapeError):
            tensor.tensor_new(bad)


class TestHeInit:
    def test_empirical_std(self):
        # fan_in=2 -> std sqrt(2/2) = 1; 1e6 draws pin it within 2%
        t = tensor.he_init((1000, 1000), 2, tensor.make_rng(7))
        assert abs(t.std() - 1.0) < 0.02

    def test_determinism(self):
        a = tensor.he_init((4, 4, 1, 8), 9, tensor.make_rng(42))
        b = tensor.he_init((4, 4, 1, 8), 9, tensor.make_rng(42))
        assert a.tobytes() == b.tobytes()

    def test_first_conv_std(self):
        # 3x3 kernel on 1 channel: fan_in 9 -> std sqrt(2/9)
        t = tensor.he_init((300, 300), 9, tensor.make_rng(0))
        assert abs(t.std() - np.sqrt(2 / 9)) < 0.01 * np.sqrt(2 / 9) * 3


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(
            tensor.add(np.float32([1, 2]), np.float32([3, 4])), [4, 6])

    def test_mul_by_zero(self):
        x = tensor.he_init((3, 3), 1, tensor.make_rng(0))
        assert (tensor.mul(x, 0.0) == 0).all()

    def test_max_with_scalar(self):
        np.testing.assert_array_equal(
            tensor.max_with_scalar(np.float32([-1, 2]), 0.0), [0, 2])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.add(np.zeros(2, np.float32), np.zeros(3, np.float32))


class TestMatmul:
    def test_identity(self):
        a = np.float32([[1, 2], [3, 4]])
        np.testing.assert_array_equal(tensor.matmul(np.eye(2, dtype=np.float32), a), a)

    def test_arithmetic(self):
        out = tensor.matmul(np.float32([[1, 2]]), np.float32([[3], [4]]))
        np.testing.assert_array_equal(out, [[11]])

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(5)
        a = (rng.random((7, 5)) * 2 - 1).astype(np.float32)
        b = (rng.random((5, 3)) * 2 - 1).astype(np.float32)
        np.testing.assert_allclose(tensor.matmul(a, b), naive_matmul(a, b), atol=1e-6)

    def test_exhaustive_small_sweep(self):
        rng = np.random.default_rng(11)
        for m in range(1, 9):
            for k in range(1, 9):
                for n in range(1, 9):
                    a = (rng.random((m, k)) * 2 - 1).astype(np.float32)
                    b = (rng.random((k, n)) * 2 - 1).astype(np.float32)
                    np.testing.assert_allclose(
                        tensor.matmul(a, b), naive_matmul(a, b), atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.matmul(np.zeros((2, 3), np.float32), np.zeros((4, 2), np.float32))


class TestReshape:
    def test_row_major_order(self):
        t = np.float32([[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(tensor.reshape(t, (6,)), [1, 2, 3, 4, 5, 6])

    def test_flatten_extent(self):
        t = tensor.tensor_new((1, 256, 256, 64))
        assert tensor.reshape(t, (1, 4194304)).shape == (1, 4194304)

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=4))
    def test_round_trip(self, dims):
        rng = np.random.default_rng(0)
        t = rng.random(dims).astype(np.float32)
        flat = tensor.reshape(t, (t.size,))
        back = tensor.reshape(flat, t.shape)
        assert back.tobytes() == t.tobytes()

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.reshape(np.zeros((2, 3), np.float32), (7,))


class TestConcatChannels:
    def test_channel_ordering(self):
        a = np.full((1, 2, 2, 2), 1, np.float32)
        b = np.full((1, 2, 2, 3), 2, np.float32)
        out = tensor.concat_channels(a, b)
        assert out.shape == (1, 2, 2, 5)
        assert (out[..., :2] == 1).all() and (out[..., 2:] == 2).all()

    def test_decoder_skip_extents(self):
        a = tensor.tensor_new((1, 64, 64, 256))
        b = tensor.tensor_new((1, 64, 64, 256))
        assert tensor.concat_channels(a, b).shape == (1, 64, 64, 512)

    def test_split_round_trip(self):
        rng = np.random.default_rng(3)
        a = rng.random((2, 3, 3, 2)).astype(np.float32)
        b = rng.random((2, 3, 3, 4)).astype(np.float32)
        a2, b2 = tensor.split_channels(tensor.concat_channels(a, b), 2)
        assert a2.tobytes() == a.tobytes() and b2.tobytes() == b.tobytes()

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.concat_channels(tensor.tensor_new((1, 2, 2, 1)),
                                   tensor.tensor_new((1, 4, 4, 1)))
