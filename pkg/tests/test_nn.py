import numpy as np
import pytest

from hhgnn import nn
from hhgnn.errors import NonFinite, ShapeMismatch
from hhgnn.hypergraph import SparseMatrix
from hhgnn.nn import Param


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def probe_loss(out, r):
    """Scalar sum(out * r): its gradient w.r.t. out is r."""
    return float(np.sum(out * r))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(3, 4))
        assert np.array_equal(nn.matmul(np.eye(3), m), m)

    def test_naive_loop_oracle(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
        np.testing.assert_allclose(nn.matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)

    def test_backward_vs_finite_differences(self, rng):
        a, b = Param(rng.normal(size=(4, 4))), Param(rng.normal(size=(4, 4)))
        r = rng.normal(size=(4, 4))

        def loss_fn():
            out = nn.matmul(a.value, b.value)
            a.grad, b.grad = nn.matmul_backward(r, a.value, b.value)
            return probe_loss(out, r)

        assert nn.gradcheck(loss_fn, [a, b]) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_non_finite_trips(self):
        with pytest.raises(NonFinite):
            nn.matmul(np.array([[np.inf]]), np.array([[1.0]]))


class TestSparseDense:
    def test_empty_matrix_gives_zeros(self, rng):
        s = SparseMatrix.from_triplets(3, 4, [], [], [])
        assert np.array_equal(nn.sparse_dense_matmul(s, rng.normal(size=(4, 2))), np.zeros((3, 2)))

    def test_dense_oracle(self, rng):
        a = rng.normal(size=(10, 10)) * (rng.random((10, 10)) < 0.2)
        d = rng.normal(size=(10, 5))
        s = SparseMatrix.from_dense(a)
        np.testing.assert_allclose(nn.sparse_dense_matmul(s, d), a @ d, rtol=0, atol=1e-10)

    def test_backward_vs_finite_differences(self, rng):
        a = rng.normal(size=(6, 6)) * (rng.random((6, 6)) < 0.4)
        s = SparseMatrix.from_dense(a)
        d = Param(rng.normal(size=(6, 3)))
        r = rng.normal(size=(6, 3))

        def loss_fn():
            out = nn.sparse_dense_matmul(s, d.value)
            d.grad = nn.sparse_dense_matmul_backward(r, s)
            return probe_loss(out, r)

        assert nn.gradcheck(loss_fn, [d]) < 1e-6

    def test_shape_mismatch(self):
        s = SparseMatrix.from_triplets(2, 3, [0], [0], [1.0])
        with pytest.raises(ShapeMismatch):
            nn.sparse_dense_matmul(s, np.zeros((2, 2)))

    def test_keeps_float32(self):
        s = SparseMatrix.from_triplets(2, 2, [0, 1], [1, 0], [0.5, 0.5])
        assert nn.sparse_dense_matmul(s, np.ones((2, 2), dtype=np.float32)).dtype == np.float32


class TestLeakyRelu:
    def test_values(self):
        assert nn.leaky_relu(np.array([[1.0, -1.0]]), 0.01).tolist() == [[1.0, -0.01]]

    def test_zero_takes_positive_branch(self):
        x = np.zeros((1, 1))
        assert nn.leaky_relu(x)[0, 0] == 0.0
        assert nn.leaky_relu_backward(np.ones((1, 1)), x)[0, 0] == 1.0

    def test_gradcheck_away_from_kink(self, rng):
        x = rng.normal(size=(5, 5))
        x[np.abs(x) < 0.1] += 0.5
        p = Param(x)
        r = rng.normal(size=(5, 5))

        def loss_fn():
            p.grad = nn.leaky_relu_backward(r, p.value, 0.2)
            return probe_loss(nn.leaky_relu(p.value, 0.2), r)

        assert nn.gradcheck(loss_fn, [p]) < 1e-6

    def test_slope_range(self):
        with pytest.raises(ValueError):
            nn.leaky_relu(np.zeros((1, 1)), 1.5)


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = rng.normal(size=(3, 3))
        for training in (True, False):
            y, mask = nn.dropout(x, 0.0, training, rng)
            assert y is x and mask is None

    def test_inference_is_identity(self, rng):
        x = rng.normal(size=(3, 3))
        y, _ = nn.dropout(x, 0.5, False)
        assert y is x

    def test_seeded_mask_is_reproducible(self):
        x = np.ones((4, 4))
        y1, m1 = nn.dropout(x, 0.5, True, np.random.default_rng(9))
        y2, m2 = nn.dropout(x, 0.5, True, np.random.default_rng(9))
        assert np.array_equal(y1, y2) and np.array_equal(m1, m2)

    def test_survivors_scaled(self):
        y, _ = nn.dropout(np.ones((50, 50)), 0.25, True, np.random.default_rng(0))
        assert set(np.unique(y).tolist()) <= {0.0, 1.0 / 0.75}

    def test_monte_carlo_mean(self):
        x = np.full((1, 100_000), 3.0)
        y, _ = nn.dropout(x, 0.5, True, np.random.default_rng(5))
        assert abs(y.mean() - 3.0) / 3.0 < 0.02

    def test_backward_uses_mask(self):
        _, mask = nn.dropout(np.ones((3, 3)), 0.5, True, np.random.default_rng(1))
        assert np.array_equal(nn.dropout_backward(np.ones((3, 3)), mask), mask)

    def test_rate_range(self):
        with pytest.raises(ValueError):
            nn.dropout(np.ones((1, 1)), 1.0, True, np.random.default_rng(0))


class TestSigmoidLinear:
    def test_sigmoid_zero(self):
        assert nn.sigmoid(np.zeros((1, 1)))[0, 0] == 0.5

    def test_sigmoid_no_overflow(self):
        s = nn.sigmoid(np.array([[-1000.0, 1000.0]]))
        assert np.all(np.isfinite(s)) and 0 < s[0, 0] < 1e-12 and s[0, 1] < 1.0

    def test_sigmoid_gradcheck(self, rng):
        p = Param(rng.normal(size=(4, 3)) * 3)
        r = rng.normal(size=(4, 3))

        def loss_fn():
            p.grad = nn.sigmoid_backward(r, p.value)
            return probe_loss(nn.sigmoid(p.value), r)

        assert nn.gradcheck(loss_fn, [p]) < 1e-6

    def test_linear_identity(self, rng):
        x = rng.normal(size=(3, 4))
        w, b = Param(np.eye(4)), Param(np.zeros((1, 4)))
        assert np.array_equal(nn.linear(x, w, b), x)

    def test_linear_gradcheck(self, rng):
        x = Param(rng.normal(size=(5, 4)))
        w, b = Param(rng.normal(size=(4, 3))), Param(rng.normal(size=(1, 3)))
        r = rng.normal(size=(5, 3))

        def loss_fn():
            w.zero_grad()
            b.zero_grad()
            out = nn.linear(x.value, w, b)
            x.grad = nn.linear_backward(r, x.value, w, b)
            return probe_loss(out, r)

        assert nn.gradcheck(loss_fn, [x, w, b]) < 1e-6

    def test_linear_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.linear(np.zeros((2, 3)), Param(np.zeros((4, 2))), Param(np.zeros((1, 2))))


class TestGradcheck:
    def _quadratic(self, w, corrupt=1.0):
        def loss_fn():
            w.grad = 2 * w.value * corrupt
            return float(np.sum(w.value**2))

        return loss_fn

    def test_quadratic_exact(self, rng):
        w = Param(rng.normal(size=(3, 3)))
        assert nn.gradcheck(self._quadratic(w), [w]) < 1e-9

    def test_detects_one_percent_corruption(self):
        w = Param(np.linspace(0.5, 2.0, 9).reshape(3, 3))
        assert nn.gradcheck(self._quadratic(w, corrupt=1.01), [w]) > 1e-3

    def test_restores_values(self, rng):
        v = rng.normal(size=(2, 2))
        w = Param(v.copy())
        nn.gradcheck(self._quadratic(w), [w])
        assert np.array_equal(w.value, v)

    def test_non_finite_loss(self):
        w = Param(np.ones((1, 1)))

        def loss_fn():
            return float("nan")

        with pytest.raises(NonFinite):
            nn.gradcheck(loss_fn, [w])


def test_param_grad_shape_enforced():
    with pytest.raises(ShapeMismatch):
        Param(np.zeros((2, 2)), np.zeros((2, 3)))
