import numpy as np
import pytest

from dauconv import tensor


class TestZeros:
    def test_small(self):
        t = tensor.zeros((1, 1, 2, 2))
        assert t.shape == (1, 1, 2, 2)
        assert t.dtype == np.float32
        assert (t == 0).all()

    def test_size_arithmetic(self):
        assert tensor.zeros((2, 3, 4, 4)).size == 96

    def test_minimal(self):
        t = tensor.zeros((1, 1, 1, 1))
        assert t.size == 1 and t[0, 0, 0, 0] == 0.0

    @pytest.mark.parametrize("dims", [(0, 1, 1, 1), (1, -1, 2, 2), (1, 1, 1), (2**20, 2**20, 4, 4)])
    def test_rejects_bad_dims(self, dims):
        with pytest.raises(ValueError):
            tensor.zeros(dims)


class TestRelu:
    def test_signs(self):
        x = np.array([-1.0, 0.0, 2.0, -3.0], dtype=np.float32).reshape(1, 1, 1, 4)
        assert tensor.elementwise_relu(x).ravel().tolist() == [0.0, 0.0, 2.0, 0.0]

    def test_identity_on_positives(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.1, 5.0, size=(2, 3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(tensor.elementwise_relu(x), x)

    def test_all_negative(self):
        x = -np.ones((1, 2, 3, 3), dtype=np.float32)
        assert (tensor.elementwise_relu(x) == 0).all()


class TestReduceSumSpatial:
    def test_plane_of_ones(self):
        assert tensor.reduce_sum_spatial(np.ones((1, 1, 2, 2), np.float32))[0, 0] == 4.0

    def test_arithmetic(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32).reshape(1, 1, 2, 2)
        assert tensor.reduce_sum_spatial(x)[0, 0] == 10.0

    def test_zero_tensor(self):
        assert tensor.reduce_sum_spatial(tensor.zeros((2, 2, 3, 3))).sum() == 0.0

    def test_batch_concatenation(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
        b = rng.normal(size=(3, 3, 4, 5)).astype(np.float32)
        joined = tensor.reduce_sum_spatial(np.concatenate([a, b], axis=0))
        split = np.concatenate([tensor.reduce_sum_spatial(a), tensor.reduce_sum_spatial(b)], axis=0)
        np.testing.assert_array_equal(joined, split)


class TestIndexing:
    def test_round_trip_all_indices(self):
        dims = (2, 3, 4, 5)
        for off in range(np.prod(dims)):
            idx = tensor.index_of(dims, off)
            assert tensor.flat_offset(dims, *idx) == off

    def test_matches_numpy_layout(self):
        dims = (2, 3, 4, 5)
        rng = np.random.default_rng(2)
        t = rng.normal(size=dims).astype(np.float32)
        flat = t.ravel()
        for n, c, y, x in [(0, 0, 0, 0), (1, 2, 3, 4), (0, 1, 2, 3)]:
            assert flat[tensor.flat_offset(dims, n, c, y, x)] == t[n, c, y, x]
