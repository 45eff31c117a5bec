"""Exact zero-mean GP regression with an optional additive noise matrix."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import InvalidArgumentError, NumericalError
from .kernel import (
    Hyperparameters,
    as_points,
    kernel_gradient_tensor,
    kernel_matrix,
    squared_distances,
)

logger = logging.getLogger(__name__)

JITTER_FACTOR = 1e-9
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainingSet:
    """Stacked training inputs and (centered) scalar outputs.

    ``groups`` is an ``(N, m)`` integer array; row ``k`` lists the indices of
    the ``m`` measurements taken at timestep ``k``. Data without array
    structure uses ``m = 1``.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    output_mean: float = 0.0
    groups: np.ndarray | None = None

    def __post_init__(self):
        X = as_points(self.inputs)
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"{X.shape[0]} inputs but {y.shape[0]} outputs"
            )
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("outputs must be finite")
        n = y.shape[0]
        groups = self.groups
        if groups is None:
            groups = np.arange(n).reshape(n, 1)
        groups = np.asarray(groups, dtype=np.intp)
        if groups.ndim != 2:
            raise InvalidArgumentError("groups must be an (N, m) index array")
        if groups.size != n or not np.array_equal(np.sort(groups, axis=None), np.arange(n)):
            raise InvalidArgumentError("groups must partition the indices 0..n-1")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "output_mean", float(self.output_mean))

    @classmethod
    def from_measurements(cls, inputs, values, groups=None, center: bool = True):
        """Build a training set, subtracting the output mean when ``center``."""
        values = np.asarray(values, dtype=float).reshape(-1)
        if center:
            if values.size == 0:
                raise InvalidArgumentError("cannot center an empty output vector")
            mean = float(np.mean(values))
            return cls(inputs, values - mean, mean, groups)
        return cls(inputs, values, 0.0, groups)

    @classmethod
    def from_timesteps(cls, positions, values, center: bool = True):
        """Build from per-timestep arrays of shape ``(N, m, d)`` and ``(N, m)``."""
        positions = np.asarray(positions, dtype=float)
        if positions.ndim == 2:
            positions = positions[:, :, None]
        N, m, d = positions.shape
        values = np.asarray(values, dtype=float)
        if values.shape != (N, m):
            raise InvalidArgumentError(
                f"values shape {values.shape} does not match positions {(N, m)}"
            )
        groups = np.arange(N * m).reshape(N, m)
        return cls.from_measurements(
            positions.reshape(N * m, d), values.reshape(-1), groups, center
        )

    @property
    def n(self) -> int:
        return self.outputs.shape[0]

    @property
    def dimension(self) -> int:
        return self.inputs.shape[1]

    @property
    def sensors_per_timestep(self) -> int:
        return self.groups.shape[1]

    @property
    def timesteps(self) -> int:
        return self.groups.shape[0]

    def with_inputs(self, inputs) -> TrainingSet:
        return TrainingSet(inputs, self.outputs, self.output_mean, self.groups)


@dataclass(frozen=True)
class Posterior:
    """Predictive distribution at a set of deterministic prediction points.

    ``variance`` is clamped at zero; ``raw_min_variance`` keeps the smallest
    pre-clamp value so round-off can be audited.
    """

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    raw_min_variance: float = 0.0
    jitter: float = 0.0

    def mean_with_offset(self, output_mean: float) -> np.ndarray:
        return self.mean + output_mean


def _symmetrize(A):
    return 0.5 * (A + A.T)


def _condition(A):
    try:
        return float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        return math.inf


def factorize(A: np.ndarray, signal_variance: float):
    """Cholesky-factor a symmetric system matrix.

    The matrix is factored as-is first. Only if that fails is
    ``1e-9 * signal_variance`` added to the diagonal; a second failure raises
    :class:`NumericalError`.

    Returns
    -------
    (factor, jitter)
        ``factor`` is scipy's ``(c, lower)`` tuple, ``jitter`` the amount added.
    """
    A = _symmetrize(np.asarray(A, dtype=float))
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_FACTOR * signal_variance
    try:
        factor = linalg.cho_factor(
            A + jitter * np.eye(A.shape[0]), lower=True, check_finite=False
        )
    except linalg.LinAlgError:
        cond = _condition(A)
        raise NumericalError(
            f"Cholesky factorization failed after jitter {jitter:.3g} "
            f"(condition number {cond:.3g})",
            condition=cond,
        ) from None
    logger.debug("added jitter %.3g to a %d x %d system", jitter, *A.shape)
    return factor, jitter


def system_matrix(train: TrainingSet, h: Hyperparameters) -> np.ndarray:
    """``K(X, X) + sigma_y**2 I`` for the training inputs."""
    A = kernel_matrix(train.inputs, train.inputs, h)
    A[np.diag_indices(train.n)] += h.noise_variance
    return A


class GPSystem:
    """Factored training system ``K + sigma_y**2 I + extra_noise``.

    Holds the Cholesky factor and the weight vector
    ``alpha = (K + sigma_y**2 I + extra_noise)^-1 y`` so several prediction
    sets and the mean gradient can reuse one factorization.

    ``extra_noise`` may be a dense ``(n, n)`` array or any object exposing
    ``add_to(matrix)`` (see :class:`arraynigp.input_noise.InputNoiseTerm`).
    ``base`` optionally supplies a precomputed :func:`system_matrix`; it is
    copied, never modified.
    """

    def __init__(self, train: TrainingSet, h: Hyperparameters, extra_noise=None, base=None):
        self.train = train
        self.h = h
        n = train.n
        if base is None:
            A = system_matrix(train, h)
        else:
            A = base.copy()
        if extra_noise is not None:
            if hasattr(extra_noise, "add_to"):
                extra_noise.add_to(A)
            else:
                E = np.asarray(extra_noise, dtype=float)
                if E.shape != (n, n):
                    raise InvalidArgumentError(
                        f"extra_noise must be {n} x {n}, got {E.shape}"
                    )
                if not np.allclose(E, E.T, rtol=1e-10, atol=1e-14):
                    raise InvalidArgumentError("extra_noise must be symmetric")
                A += E
        if n:
            self.factor, self.jitter = factorize(A, h.signal_variance)
            self.alpha = linalg.cho_solve(self.factor, train.outputs, check_finite=False)
        else:
            self.factor, self.jitter = None, 0.0
            self.alpha = np.zeros(0)

    def predict(self, points, full_cov: bool = True) -> Posterior:
        d = self.train.dimension
        Xs = as_points(points, d)
        if Xs.shape[0] == 0:
            return Posterior(np.zeros(0), np.zeros(0), np.zeros((0, 0)) if full_cov else None)
        if Xs.shape[1] != d:
            raise InvalidArgumentError(f"prediction points must have dimension {d}")
        h = self.h
        if self.train.n == 0:
            Kss = kernel_matrix(Xs, Xs, h)
            return Posterior(
                np.zeros(Xs.shape[0]),
                np.full(Xs.shape[0], h.signal_variance),
                Kss if full_cov else None,
            )
        Ks = kernel_matrix(self.train.inputs, Xs, h)
        mean = Ks.T @ self.alpha
        V = linalg.cho_solve(self.factor, Ks, check_finite=False)
        if full_cov:
            cov = _symmetrize(kernel_matrix(Xs, Xs, h) - Ks.T @ V)
            raw = np.diag(cov).copy()
        else:
            cov = None
            raw = h.signal_variance - np.einsum("ij,ij->j", Ks, V)
        return Posterior(
            mean=mean,
            variance=np.maximum(raw, 0.0),
            covariance=cov,
            raw_min_variance=float(raw.min()),
            jitter=self.jitter,
        )

    def mean_gradient(self, points=None) -> np.ndarray:
        """Gradient of the posterior mean, shape ``(len(points), d)``.

        Defaults to the training inputs.
        """
        X = self.train.inputs if points is None else as_points(points, self.train.dimension)
        G = kernel_gradient_tensor(self.train.inputs, X, self.h)
        return np.einsum("ijk,j->ik", G, self.alpha)


def gp_posterior(
    train: TrainingSet,
    predict,
    h: Hyperparameters,
    extra_noise=None,
    full_cov: bool = True,
) -> Posterior:
    """Posterior at ``predict`` given ``train``.

    With ``extra_noise`` the system matrix becomes
    ``K + sigma_y**2 I + extra_noise``; prediction points are treated as
    deterministic, so no extra term is added to the predictive covariance.
    """
    return GPSystem(train, h, extra_noise).predict(predict, full_cov=full_cov)


def nlml(train: TrainingSet, h: Hyperparameters) -> float:
    """Negative log marginal likelihood of the outputs under ``h``."""
    if train.n == 0:
        raise InvalidArgumentError("nlml requires a nonempty training set")
    theta = np.log([h.length_scale, h.signal_variance, h.noise_variance])
    return _nlml_and_grad(train, theta, grad=False)[0]


def _nlml_and_grad(train: TrainingSet, theta: np.ndarray, grad: bool = True):
    l, sf2, sy2 = np.exp(theta)
    n = train.n
    r2 = squared_distances(train.inputs, train.inputs)
    K = sf2 * np.exp(-0.5 * r2 / l**2)
    A = K + sy2 * np.eye(n)
    factor, _ = factorize(A, sf2)
    y = train.outputs
    alpha = linalg.cho_solve(factor, y, check_finite=False)
    L = factor[0]
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = 0.5 * float(y @ alpha) + 0.5 * logdet + 0.5 * n * LOG_2PI
    if not grad:
        return value, None
    W = np.outer(alpha, alpha) - linalg.cho_solve(factor, np.eye(n), check_finite=False)
    dK = (
        K * r2 / l**2,  # d/dlog l
        K,  # d/dlog sf2
        sy2 * np.eye(n),  # d/dlog sy2
    )
    g = np.array([-0.5 * np.sum(W * D) for D in dK])
    return value, g


@dataclass
class HyperFit:
    """Outcome of :func:`fit_hyperparameters`."""

    hyper: Hyperparameters
    nlml: float
    converged: bool
    starts: int
    seed: int
    bounds: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def settings(self) -> dict:
        return {
            "optimizer": "L-BFGS-B (log-parameters, analytic gradient)",
            "starts": self.starts,
            "seed": self.seed,
            "bounds": self.bounds,
            "converged": self.converged,
            "nlml": self.nlml,
        }


def default_bounds(init: Hyperparameters, decades: float = 4.0) -> dict:
    """Bounds ``decades`` orders of magnitude either side of ``init``."""
    f = 10.0**decades
    return {
        "length_scale": (init.length_scale / f, init.length_scale * f),
        "signal_variance": (init.signal_variance / f, init.signal_variance * f),
        "noise_variance": (init.noise_variance / f, init.noise_variance * f),
    }


def fit_hyperparameters(
    train: TrainingSet,
    init: Hyperparameters,
    bounds: dict | None = None,
    starts: int = 5,
    seed: int = 0,
    maxiter: int = 200,
) -> HyperFit:
    """Minimize the NLML over log ``(l, sigma_f**2, sigma_y**2)``.

    The first start is ``init``; the remaining ``starts - 1`` are drawn
    uniformly in log-space inside ``bounds`` from a generator seeded by
    ``seed``. The best result wins, ties going to the lower start index.
    """
    if train.n == 0:
        raise InvalidArgumentError("cannot fit hyperparameters to an empty training set")
    if init.noise_variance <= 0:
        raise InvalidArgumentError("fitting requires a positive initial noise_variance")
    bounds = dict(bounds or default_bounds(init))
    names = ("length_scale", "signal_variance", "noise_variance")
    lo = np.log([bounds[k][0] for k in names])
    hi = np.log([bounds[k][1] for k in names])
    theta0 = np.log([init.length_scale, init.signal_variance, init.noise_variance])
    if np.any(theta0 < lo - 1e-12) or np.any(theta0 > hi + 1e-12):
        raise InvalidArgumentError("initial hyperparameters lie outside bounds")
    theta0 = np.clip(theta0, lo, hi)

    rng = np.random.default_rng(seed)
    candidates = [theta0] + [rng.uniform(lo, hi) for _ in range(max(starts, 1) - 1)]

    def objective(theta):
        try:
            return _nlml_and_grad(train, theta)
        except NumericalError:
            return math.inf, np.zeros(3)

    init_value = objective(theta0)[0]
    best_theta, best_value, best_ok = theta0, init_value, True
    history = []
    for i, start in enumerate(candidates):
        res = optimize.minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": maxiter},
        )
        history.append({"start": i, "nlml": float(res.fun), "success": bool(res.success)})
        if res.fun < best_value - 1e-10 * (1.0 + abs(best_value)):
            best_theta, best_value, best_ok = res.x, float(res.fun), bool(res.success)
        elif i == 0:
            best_ok = bool(res.success)
    if not best_ok:
        logger.warning("hyperparameter optimization did not report convergence")
    l, sf2, sy2 = np.exp(best_theta)
    return HyperFit(
        hyper=Hyperparameters(float(l), float(sf2), float(sy2)),
        nlml=float(best_value),
        converged=best_ok,
        starts=len(candidates),
        seed=seed,
        bounds={k: list(v) for k, v in bounds.items()},
        history=history,
    )
