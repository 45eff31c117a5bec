"""Rigid sensor-array model: offsets, poses and correlated position noise."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidArgumentError


class Structure(str, enum.Enum):
    """Correlation structure of position errors across sensors."""

    INDEPENDENT = "independent"
    ARRAY = "array"


@dataclass(frozen=True)
class ArrayGeometry:
    """Body-frame sensor offsets of shape ``(m, d)``, re-centered on construction."""

    offsets: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.offsets, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.ndim != 2 or S.shape[0] < 1:
            raise InvalidArgumentError("offsets must be a nonempty (m, d) array")
        if not np.all(np.isfinite(S)):
            raise InvalidArgumentError("offsets must be finite")
        S = S - S.mean(axis=0)
        S[np.abs(S) < 1e-15] = 0.0
        S.setflags(write=False)
        object.__setattr__(self, "offsets", S)

    @property
    def m(self) -> int:
        return self.offsets.shape[0]

    @property
    def dimension(self) -> int:
        return self.offsets.shape[1]

    @classmethod
    def line(cls, m: int, length: float, d: int = 1) -> ArrayGeometry:
        """``m`` sensors equidistant along the first axis over ``length``."""
        if m < 1 or length < 0:
            raise InvalidArgumentError("need m >= 1 and length >= 0")
        S = np.zeros((m, d))
        S[:, 0] = np.linspace(-length / 2, length / 2, m) if m > 1 else 0.0
        return cls(S)

    @classmethod
    def grid(cls, nx: int, ny: int, size_x: float, size_y: float, d: int = 3) -> ArrayGeometry:
        """Planar ``nx`` by ``ny`` grid spanning ``size_x`` by ``size_y``."""
        if d < 2:
            raise InvalidArgumentError("a planar grid needs d >= 2")
        gx = np.linspace(-size_x / 2, size_x / 2, nx)
        gy = np.linspace(-size_y / 2, size_y / 2, ny)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        S = np.zeros((nx * ny, d))
        S[:, 0] = xx.ravel()
        S[:, 1] = yy.ravel()
        return cls(S)


@dataclass(frozen=True)
class Pose:
    """Array-center position and body-to-navigation rotation."""

    center: np.ndarray
    rotation: np.ndarray | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        d = c.shape[0]
        R = np.eye(d) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if R.shape != (d, d):
            raise InvalidArgumentError(f"rotation must be {d} x {d}, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(d), atol=1e-9) or np.linalg.det(R) < 0:
            raise InvalidArgumentError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def from_quaternion(cls, center, qw, qx, qy, qz) -> Pose:
        q = np.array([qx, qy, qz, qw], dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise InvalidArgumentError("zero quaternion")
        return cls(center, Rotation.from_quat(q / norm).as_matrix())

    @classmethod
    def from_heading(cls, center, theta: float) -> Pose:
        c, s = np.cos(theta), np.sin(theta)
        return cls(center, np.array([[c, -s], [s, c]]))


@dataclass(frozen=True)
class NoiseModel:
    """Input-position noise covariance and its sharing structure."""

    sigma_x: np.ndarray
    structure: Structure = Structure.ARRAY

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sigma_x, dtype=float))
        if S.shape[0] != S.shape[1]:
            raise InvalidArgumentError(f"sigma_x must be square, got {S.shape}")
        check_psd(S, "sigma_x")
        object.__setattr__(self, "sigma_x", 0.5 * (S + S.T))
        object.__setattr__(self, "structure", Structure(self.structure))

    @property
    def dimension(self) -> int:
        return self.sigma_x.shape[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.sigma_x)

    def with_structure(self, structure) -> NoiseModel:
        return NoiseModel(self.sigma_x, Structure(structure))

    def to_dict(self) -> dict:
        return {"sigma_x": self.sigma_x.tolist(), "structure": self.structure.value}

    @classmethod
    def from_dict(cls, data: dict) -> NoiseModel:
        return cls(np.asarray(data["sigma_x"], dtype=float), data.get("structure", "array"))


def check_psd(S: np.ndarray, name: str = "matrix", rtol: float = 1e-12) -> None:
    """Raise :class:`InvalidArgumentError` unless ``S`` is symmetric PSD."""
    if not np.all(np.isfinite(S)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    scale = max(np.abs(S).max(), 1e-300)
    if not np.allclose(S, S.T, atol=1e-12 * scale):
        raise InvalidArgumentError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w.min() < -rtol * scale:
        raise InvalidArgumentError(
            f"{name} is not positive semi-definite (min eigenvalue {w.min():.3g})"
        )


def covariance_sqrt(S: np.ndarray) -> np.ndarray:
    """Factor ``A`` with ``A A^T = S`` for a PSD, possibly singular ``S``."""
    S = np.atleast_2d(S)
    if S.shape == (1, 1):
        return np.sqrt(np.maximum(S, 0.0))
    if np.count_nonzero(S - np.diag(np.diagonal(S))) == 0:
        return np.diag(np.sqrt(np.maximum(np.diagonal(S), 0.0)))
    w, V = np.linalg.eigh(S)
    return V * np.sqrt(np.maximum(w, 0.0))


def h_matrix(m: int, d: int) -> np.ndarray:
    """``1_m kron I_d``: ``m`` stacked ``d x d`` identity blocks."""
    if m < 1 or d < 1:
        raise InvalidArgumentError("need m >= 1 and d >= 1")
    return np.kron(np.ones((m, 1)), np.eye(d))


def sensor_positions(pose: Pose, geom: ArrayGeometry) -> np.ndarray:
    """Navigation-frame sensor positions ``center + R s_i``, shape ``(m, d)``."""
    if pose.center.shape[0] != geom.dimension:
        raise InvalidArgumentError(
            f"pose dimension {pose.center.shape[0]} != geometry dimension {geom.dimension}"
        )
    return pose.center[None, :] + geom.offsets @ pose.rotation.T


def trajectory_positions(poses, geom: ArrayGeometry) -> np.ndarray:
    """Stack :func:`sensor_positions` over poses into ``(N, m, d)``."""
    return np.stack([sensor_positions(p, geom) for p in poses])


def timestep_covariance(noise: NoiseModel, m: int) -> np.ndarray:
    """Joint ``(d m) x (d m)`` position-error covariance for one timestep."""
    S = noise.sigma_x
    if noise.structure is Structure.ARRAY:
        H = h_matrix(m, S.shape[0])
        return H @ S @ H.T
    return np.kron(np.eye(m), S)


def joint_input_covariance(noise: NoiseModel, m: int, N: int, d: int) -> np.ndarray:
    """Dense ``(d m N)`` square covariance of all stacked position errors.

    Only meant for small problems and checks; the input-noise machinery works
    per timestep block instead.
    """
    if noise.dimension != d:
        raise InvalidArgumentError(f"sigma_x is {noise.dimension}-D, expected {d}")
    return np.kron(np.eye(N), timestep_covariance(noise, m))


def perturb_positions(true_positions, noise: NoiseModel, rng=None) -> np.ndarray:
    """Add position errors to ``(N, m, d)`` true sensor positions.

    Array-correlated noise draws one error per timestep and adds it to every
    sensor of that timestep; independent noise draws one per sensor.
    ``rng`` is a seed or a :class:`numpy.random.Generator`.
    """
    X = np.asarray(true_positions, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    N, m, d = X.shape
    if noise.dimension != d:
        raise InvalidArgumentError(f"sigma_x is {noise.dimension}-D, positions are {d}-D")
    check_psd(noise.sigma_x, "sigma_x")
    rng = np.random.default_rng(rng)
    A = covariance_sqrt(noise.sigma_x)
    if noise.structure is Structure.ARRAY:
        e = rng.standard_normal((N, d)) @ A.T
        return X + e[:, None, :]
    e = rng.standard_normal((N, m, d)) @ A.T
    return X + e
