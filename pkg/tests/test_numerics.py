import numpy as np
import pytest

from errors import NumericError, ShapeError
from services.numerics import (
    as_matrix,
    finite_diff_grad,
    make_rng,
    matmul,
    scaled_error,
    softmax,
    softmax_backward,
)


class TestSoftmax:

    def test_sums_to_one_and_positive(self, rng):
        z = rng.normal(size=7)
        p = softmax(z)
        assert np.all(p > 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_two_logits(self):
        np.testing.assert_allclose(softmax([1.0, 0.0]), [0.7311, 0.2689], atol=1e-4)

    def test_sums_to_one_over_many_inputs(self):
        gen = np.random.default_rng(8)
        for _ in range(500):
            z = gen.normal(scale=float(gen.uniform(0.1, 50.0)), size=int(gen.integers(1, 17)))
            assert softmax(z).sum() == pytest.approx(1.0, abs=1e-12)

    def test_shift_invariant(self, rng):
        z = rng.normal(size=5)
        np.testing.assert_allclose(softmax(z), softmax(z + 123.0), atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        p = softmax(np.array([1000.0, 999.0, -1000.0]))
        assert np.all(np.isfinite(p))
        assert p[0] > p[1] > p[2]

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax(np.array([0.0, np.inf]))

    def test_backward_matches_finite_differences(self, rng):
        z = rng.normal(size=4)
        upstream = rng.normal(size=4)

        def f(v):
            return float(upstream @ softmax(v))

        np.testing.assert_allclose(
            softmax_backward(softmax(z), upstream), finite_diff_grad(f, z), atol=1e-9
        )


class TestMatmul:

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_product(self):
        np.testing.assert_array_equal(matmul(np.eye(2), [[1.0, 2.0], [3.0, 4.0]]), [[1.0, 2.0], [3.0, 4.0]])

    def test_column_product(self):
        np.testing.assert_array_equal(matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]]), [[3.0], [7.0]])

    def test_zero_matrix(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(matmul(np.zeros((2, 3)), m), np.zeros((2, 4)))

    def test_associative(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 2))
            c = rng.normal(size=(2, 5))
            np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9)

    def test_as_matrix_rejects_vectors(self):
        with pytest.raises(ShapeError):
            as_matrix(np.ones(3))


class TestFiniteDifferences:

    def test_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        grad = finite_diff_grad(lambda v: float(v @ v), x)
        np.testing.assert_allclose(grad, 2 * x, atol=1e-8)

    def test_does_not_mutate_input(self):
        x = np.array([1.0, 2.0])
        finite_diff_grad(lambda v: float(v.sum()), x)
        np.testing.assert_array_equal(x, [1.0, 2.0])

    def test_non_finite_function(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda v: float("inf"), np.zeros(2))
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError):
                finite_diff_grad(lambda v: float(np.sqrt(v[0])), np.zeros(1))

    def test_rejects_non_positive_eps(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), eps=0.0)


class TestRng:

    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(make_rng(42).normal(size=10), make_rng(42).normal(size=10))

    def test_streams_differ(self):
        a = make_rng(42, stream=0).normal(size=10)
        b = make_rng(42, stream=1).normal(size=10)
        assert not np.array_equal(a, b)

    def test_accepts_full_u64_range(self):
        make_rng(2 ** 64 - 1)
        with pytest.raises(ValueError):
            make_rng(2 ** 64)


class TestScaledError:

    def test_absolute_below_one(self):
        assert float(scaled_error(1e-6, 2e-6)) == pytest.approx(1e-6)

    def test_relative_above_one(self):
        assert float(scaled_error(100.0, 101.0)) == pytest.approx(1.0 / 101.0)
