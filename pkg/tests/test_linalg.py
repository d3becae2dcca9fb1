import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uniunc.linalg import (
    log_softmax,
    matmul,
    mean_and_variance,
    sandwich_diag,
    softmax,
)
from uniunc.rng import RngStream, gaussian

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_checked_2x2(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[1.0], [1.0]]
        np.testing.assert_array_equal(matmul(a, b), [[3.0], [7.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b), expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @given(
        hnp.arrays(np.float64, (2, 3), elements=st.floats(-10, 10)),
        hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
        hnp.arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
    )
    @settings(max_examples=50, deadline=None)
    def test_associativity(self, a, b, c):
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-9)


class TestSandwichDiag:
    def test_identity_jacobian(self):
        np.testing.assert_array_equal(
            sandwich_diag(np.eye(2), [0.25, 0.25]), [0.25, 0.25]
        )

    def test_diagonal_scaling(self):
        np.testing.assert_array_equal(
            sandwich_diag([[2.0, 0.0], [0.0, 3.0]], [1.0, 1.0]), [4.0, 9.0]
        )

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(3)
        j = rng.normal(size=(3, 4))
        var = rng.random(4)
        dense = j @ np.diag(var) @ j.T
        np.testing.assert_allclose(sandwich_diag(j, var), np.diag(dense), atol=1e-12)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError, match="non-negative"):
            sandwich_diag(np.eye(2), [0.1, -0.1])

    @given(
        hnp.arrays(np.float64, (3, 4), elements=st.floats(-100, 100)),
        hnp.arrays(np.float64, (4,), elements=st.floats(0, 100)),
    )
    @settings(max_examples=100, deadline=None)
    def test_nonnegative_output(self, j, var):
        assert np.all(sandwich_diag(j, var) >= 0.0)


class TestMeanAndVariance:
    def test_two_point_set(self):
        mean, var = mean_and_variance([[1.0, 1.0], [3.0, 3.0]])
        np.testing.assert_array_equal(mean, [2.0, 2.0])
        np.testing.assert_array_equal(var, [2.0, 2.0])

    def test_identical_samples_give_exact_zero(self):
        samples = [[0.1, 7.3]] * 3  # 0.1 * 3 / 3 != 0.1 in floats; must still be exact
        mean, var = mean_and_variance(samples)
        np.testing.assert_array_equal(mean, [0.1, 7.3])
        np.testing.assert_array_equal(var, [0.0, 0.0])

    def test_sampling_check(self):
        draws = gaussian(RngStream(5), np.array([5.0]), np.array([4.0]), 1000)
        mean, var = mean_and_variance(draws)
        assert abs(mean[0] - 5.0) < 0.3
        assert abs(var[0] - 4.0) < 0.6

    def test_needs_two_samples(self):
        with pytest.raises(ValueError, match="at least two"):
            mean_and_variance([[1.0, 2.0]])

    def test_unbiased_denominator(self):
        samples = np.array([[0.0], [1.0], [2.0]])
        _, var = mean_and_variance(samples)
        assert var[0] == pytest.approx(1.0)  # sum sq dev 2 over (n-1)=2

    @given(
        hnp.arrays(
            np.float64,
            st.tuples(st.integers(2, 8), st.integers(1, 4)),
            elements=finite_floats,
        ),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariant(self, samples, rnd):
        order = list(range(samples.shape[0]))
        rnd.shuffle(order)
        m1, v1 = mean_and_variance(samples)
        m2, v2 = mean_and_variance(samples[order])
        np.testing.assert_allclose(m1, m2, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(v1, v2, rtol=1e-9, atol=1e-12)


class TestSoftmax:
    def test_sums_to_one(self):
        z = np.array([1.0, -2.0, 0.5])
        assert softmax(z).sum() == pytest.approx(1.0, abs=1e-12)

    def test_extreme_logits_stable(self):
        p = softmax(np.array([1000.0, -1000.0]))
        assert np.isfinite(p).all()
        assert p[0] == pytest.approx(1.0)

    def test_log_softmax_matches(self):
        z = np.array([0.3, -1.2, 4.0])
        np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), rtol=1e-12)
