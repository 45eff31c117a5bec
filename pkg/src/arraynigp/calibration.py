"""Scalar GP outputs from raw triaxial magnetometer readings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

SQUARED = "squared"
NORM = "norm"
NORM_MODES = (SQUARED, NORM)


@dataclass(frozen=True)
class SensorCalibration:
    """Soft-iron distortion ``D`` (3x3) and hard-iron bias ``b`` (3,)."""

    distortion: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.distortion, dtype=float)
        if D.size == 9:
            D = D.reshape(3, 3)
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if D.shape != (3, 3) or b.shape != (3,):
            raise InvalidArgumentError("calibration needs a 3x3 distortion and a 3-vector bias")
        if abs(np.linalg.det(D)) <= 1e-12:
            raise InvalidArgumentError("distortion matrix is singular")
        object.__setattr__(self, "distortion", D)
        object.__setattr__(self, "bias", b)

    @classmethod
    def identity(cls) -> SensorCalibration:
        return cls(np.eye(3), np.zeros(3))


def apply_calibration(raw, cal: SensorCalibration, mode: str = SQUARED):
    """``|D^-1 (raw - b)|**2`` (or the plain norm with ``mode="norm"``).

    ``raw`` may be a single 3-vector or an ``(n, 3)`` array of readings.
    """
    if mode not in NORM_MODES:
        raise InvalidArgumentError(f"unknown norm mode {mode!r}")
    raw = np.asarray(raw, dtype=float)
    single = raw.ndim == 1
    R = np.atleast_2d(raw)
    if R.shape[1] != 3:
        raise InvalidArgumentError("readings must be 3-vectors")
    corrected = np.linalg.solve(cal.distortion, (R - cal.bias).T).T
    sq = np.einsum("ij,ij->i", corrected, corrected)
    out = sq if mode == SQUARED else np.sqrt(sq)
    return float(out[0]) if single else out


def center_outputs(values):
    """Subtract the mean; return ``(centered, mean)``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidArgumentError("cannot center an empty vector")
    mean = float(np.mean(v))
    return v - mean, mean
