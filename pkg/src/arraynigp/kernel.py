"""Squared-exponential covariance function and its input-location gradient."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Hyperparameters:
    """SE kernel hyperparameters plus the Gaussian measurement-noise variance.

    Parameters
    ----------
    length_scale : float
        Length-scale ``l`` in input units (meters for field data).
    signal_variance : float
        Prior variance ``sigma_f**2`` of the latent field.
    noise_variance : float
        Measurement-noise variance ``sigma_y**2``.
    """

    length_scale: float
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        for name in ("length_scale", "signal_variance", "noise_variance"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{name} must be finite, got {value!r}")
        if self.length_scale <= 0:
            raise InvalidArgumentError("length_scale must be > 0")
        if self.signal_variance <= 0:
            raise InvalidArgumentError("signal_variance must be > 0")
        if self.noise_variance < 0:
            raise InvalidArgumentError("noise_variance must be >= 0")

    @property
    def signal_std(self) -> float:
        return math.sqrt(self.signal_variance)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Hyperparameters:
        return cls(
            float(data["length_scale"]),
            float(data["signal_variance"]),
            float(data.get("noise_variance", 0.0)),
        )


def as_points(X, d: int | None = None) -> np.ndarray:
    """Coerce ``X`` to a float array of shape ``(n, d)``.

    A 1-D array is read as ``n`` scalar inputs. When ``d`` is given the
    result is checked against it.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise InvalidArgumentError(f"points must be 1-D or 2-D, got ndim={X.ndim}")
    if d is not None and X.shape[0] and X.shape[1] != d:
        raise InvalidArgumentError(f"expected points of dimension {d}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("points must have finite coordinates")
    return X


def _pair(A, B):
    A = as_points(A)
    B = as_points(B)
    if A.shape[0] and B.shape[0] and A.shape[1] != B.shape[1]:
        raise InvalidArgumentError(
            f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}"
        )
    return A, B


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape ``(len(A), len(B))``."""
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def se_kernel(a, b, h: Hyperparameters) -> float:
    """``sigma_f**2 * exp(-|a - b|**2 / (2 l**2))`` for two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    r2 = float(np.dot(a - b, a - b))
    return h.signal_variance * math.exp(-0.5 * r2 / h.length_scale**2)


def kernel_matrix(A, B, h: Hyperparameters) -> np.ndarray:
    """Cross-covariance matrix ``K(A, B)`` of shape ``(|A|, |B|)``."""
    A, B = _pair(A, B)
    return h.signal_variance * np.exp(-0.5 * squared_distances(A, B) / h.length_scale**2)


def kernel_gradient_tensor(train, eval_points, h: Hyperparameters) -> np.ndarray:
    """Derivative of ``k(x_eval, x_train)`` w.r.t. ``x_eval``.

    Returns an array of shape ``(|eval|, |train|, d)`` whose ``[i, j]`` entry
    is ``-(x_eval_i - x_train_j) * sigma_f**2 / l**2 * exp(...)``.
    """
    T, E = _pair(train, eval_points)
    diff = E[:, None, :] - T[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    k = h.signal_variance * np.exp(-0.5 * r2 / h.length_scale**2)
    return -diff * (k / h.length_scale**2)[:, :, None]


def kernel_input_gradient(train, eval_points, h: Hyperparameters) -> np.ndarray:
    """Block matrix ``grad K`` of shape ``(d * |eval|, |train|)``.

    Rows ``d*i : d*(i+1)`` hold the gradient of ``k(x_eval_i, x_train_j)``
    with respect to ``x_eval_i`` in column ``j``.
    """
    G = kernel_gradient_tensor(train, eval_points, h)
    n_eval, n_train, d = G.shape
    return G.transpose(0, 2, 1).reshape(n_eval * d, n_train)
