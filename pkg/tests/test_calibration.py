import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from arraynigp.calibration import NORM, SQUARED, SensorCalibration, apply_calibration, center_outputs
from arraynigp.errors import InvalidArgumentError

finite = st.floats(-100, 100, allow_nan=False)


class TestApplyCalibration:
    def test_pythagorean(self):
        cal = SensorCalibration.identity()
        assert apply_calibration([3.0, 4.0, 0.0], cal) == 25.0
        assert apply_calibration([3.0, 4.0, 0.0], cal, NORM) == 5.0

    def test_bias_only(self):
        cal = SensorCalibration(np.eye(3), [1.0, -2.0, 0.5])
        assert apply_calibration([1.0, -2.0, 0.5], cal) == 0.0

    def test_scaled_distortion(self):
        assert apply_calibration([2.0, 0.0, 0.0], SensorCalibration(2 * np.eye(3), np.zeros(3))) == 1.0

    def test_row_major_nine_values(self):
        D = np.array([[2.0, 0.1, 0.0], [0.0, 1.0, 0.3], [0.0, 0.0, 0.5]])
        a = SensorCalibration(D.ravel().tolist(), [0, 0, 0])
        np.testing.assert_array_equal(a.distortion, D)

    def test_batch_matches_single(self, rng):
        cal = SensorCalibration(np.eye(3) + 0.1 * rng.normal(size=(3, 3)), rng.normal(size=3))
        R = rng.normal(size=(7, 3))
        batch = apply_calibration(R, cal)
        assert batch.shape == (7,)
        np.testing.assert_allclose(batch, [apply_calibration(r, cal) for r in R], rtol=1e-14)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            SensorCalibration(np.zeros((3, 3)), np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            SensorCalibration(np.eye(2), np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            apply_calibration([1.0, 2.0, 3.0], SensorCalibration.identity(), "cubed")

    @settings(max_examples=50)
    @given(arrays(float, 3, elements=finite), st.integers(0, 2**31))
    def test_rotation_invariance(self, v, seed):
        rng = np.random.default_rng(seed)
        D = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        R = Rotation.random(random_state=seed).as_matrix()
        base = apply_calibration(v, SensorCalibration(D, b))
        rotated = apply_calibration(R @ (v - b), SensorCalibration(R @ D, np.zeros(3)))
        assert rotated == pytest.approx(base, rel=1e-9, abs=1e-9)

    def test_shared_calibration_agrees_to_noise(self, rng):
        D = np.array([[1.1, 0.05, 0.0], [0.0, 0.9, 0.02], [0.01, 0.0, 1.05]])
        b = np.array([3.0, -1.0, 2.0])
        field = np.array([20.0, 5.0, 40.0])
        sigma = 0.01
        raw = (D @ field + b) + sigma * rng.standard_normal((30, 3))
        out = apply_calibration(raw, SensorCalibration(D, b), NORM)
        assert np.all(np.abs(out - np.linalg.norm(field)) < 6 * sigma * np.linalg.norm(np.linalg.inv(D), 2))


class TestCenter:
    def test_example(self):
        c, m = center_outputs([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(c, [-1.0, 0.0, 1.0])
        assert m == 2.0

    def test_constant(self):
        c, m = center_outputs(np.full(5, 7.25))
        assert m == 7.25 and np.all(c == 0)

    def test_idempotent(self):
        c, _ = center_outputs([1.0, 2.0, 3.0])
        c2, m2 = center_outputs(c)
        np.testing.assert_array_equal(c2, c)
        assert m2 == 0.0

    @settings(max_examples=50)
    @given(arrays(float, st.integers(2, 50), elements=st.floats(-1e3, 1e3)))
    def test_mean_removed_and_reconstructs(self, v):
        c, m = center_outputs(v)
        assert abs(c.mean()) <= 1e-12 * max(v.std(), 1.0) * 10
        np.testing.assert_allclose(c + m, v, rtol=0, atol=1e-12 * max(1.0, np.abs(v).max()))

    @pytest.mark.parametrize("seed", range(10))
    def test_mean_within_relative_tolerance(self, seed):
        v = 50.0 + 3.0 * np.random.default_rng(seed).standard_normal(1200)
        c, _ = center_outputs(v)
        assert abs(c.mean()) <= 1e-12 * c.std()

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            center_outputs([])


def test_modes_constant():
    assert (SQUARED, NORM) == ("squared", "norm")
