import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arraynigp.errors import InvalidArgumentError
from arraynigp.kernel import (
    Hyperparameters,
    as_points,
    kernel_gradient_tensor,
    kernel_input_gradient,
    kernel_matrix,
    se_kernel,
)

H = Hyperparameters(0.5, 1.0)
E_HALF = 0.6065306597126334  # exp(-1/2)

coords = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


class TestHyperparameters:
    def test_valid(self):
        h = Hyperparameters(0.5, 4.0, 0.01)
        assert h.signal_std == 2.0
        assert Hyperparameters.from_dict(h.to_dict()) == h

    @pytest.mark.parametrize(
        "args",
        [(0.0, 1.0, 0.0), (-1.0, 1.0, 0.0), (1.0, 0.0, 0.0), (1.0, 1.0, -1e-9), (math.nan, 1.0, 0.0)],
    )
    def test_invalid(self, args):
        with pytest.raises(InvalidArgumentError):
            Hyperparameters(*args)


def test_as_points_shapes():
    assert as_points([1.0, 2.0, 3.0]).shape == (3, 1)
    assert as_points([[1.0, 2.0]]).shape == (1, 2)
    with pytest.raises(InvalidArgumentError):
        as_points([[0.0, math.inf]])
    with pytest.raises(InvalidArgumentError):
        as_points([[0.0, 1.0]], d=3)


class TestSEKernel:
    def test_zero_distance(self):
        assert se_kernel([0.3], [0.3], H) == 1.0

    def test_half_lengthscale(self):
        assert se_kernel([0.0], [0.5], H) == pytest.approx(E_HALF, rel=1e-14)

    def test_decay(self):
        vals = [se_kernel([0.0], [r], H) for r in (0.0, 0.5, 1.0, 5.0, 50.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-300

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            se_kernel([0.0, 1.0], [0.0], H)

    @given(arrays(float, 3, elements=coords), arrays(float, 3, elements=coords))
    def test_symmetry_and_bound(self, a, b):
        k = se_kernel(a, b, Hyperparameters(0.7, 2.5))
        assert k == se_kernel(b, a, Hyperparameters(0.7, 2.5))
        assert 0 <= k <= 2.5
        if np.linalg.norm(a - b) > 1e-6:
            assert k < 2.5


class TestKernelMatrix:
    def test_single_point(self):
        h = Hyperparameters(1.3, 2.7)
        assert kernel_matrix([[0.2, 0.1]], [[0.2, 0.1]], h).tolist() == [[2.7]]

    def test_row(self):
        K = kernel_matrix([0.0], [0.0, 0.5], H)
        np.testing.assert_allclose(K, [[1.0, E_HALF]], rtol=1e-14)

    def test_brute_force(self, rng):
        A, B = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
        K = kernel_matrix(A, B, H)
        ref = [[se_kernel(a, b, H) for b in B] for a in A]
        np.testing.assert_allclose(K, ref, rtol=1e-13)

    @settings(max_examples=30)
    @given(arrays(float, (8, 2), elements=coords))
    def test_psd(self, A):
        K = kernel_matrix(A, A, H)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * H.signal_variance

    @settings(max_examples=20)
    @given(arrays(float, (10, 1), elements=st.floats(0, 1)))
    def test_cholesky_with_jitter(self, A):
        # duplicates can make K exactly singular; the jittered matrix must still factor
        K = kernel_matrix(A, A, H) + 1e-9 * H.signal_variance * np.eye(10)
        np.linalg.cholesky(K)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            kernel_matrix(np.zeros((2, 2)), np.zeros((2, 3)), H)


def _fd_gradient(train, x, h, step=1e-6):
    d = x.shape[0]
    out = np.zeros((d, len(train)))
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        for j, t in enumerate(train):
            out[k, j] = (se_kernel(x + e, t, h) - se_kernel(x - e, t, h)) / (2 * step)
    return out


class TestKernelInputGradient:
    def test_zero_separation(self):
        G = kernel_input_gradient([[0.4, 1.0]], [[0.4, 1.0]], H)
        assert G.shape == (2, 1)
        assert np.all(G == 0)

    def test_hand_value(self):
        G = kernel_input_gradient([0.5], [0.0], H)
        assert G[0, 0] == pytest.approx(2 * E_HALF, rel=1e-14)
        assert G[0, 0] == pytest.approx(1.21306, abs=1e-5)

    def test_block_layout(self, rng):
        train, ev = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        G = kernel_input_gradient(train, ev, H)
        T = kernel_gradient_tensor(train, ev, H)
        assert G.shape == (12, 5)
        for i in range(4):
            np.testing.assert_array_equal(G[3 * i : 3 * i + 3], T[i].T)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_finite_difference(self, rng, d):
        h = Hyperparameters(0.8, 1.7)
        train = rng.normal(size=(6, d))
        x = rng.normal(size=d)
        G = kernel_input_gradient(train, x[None, :], h)
        fd = _fd_gradient(train, x, h)
        np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            kernel_input_gradient(np.zeros((2, 1)), np.zeros((2, 2)), H)
