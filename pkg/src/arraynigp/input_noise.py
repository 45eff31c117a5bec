"""Input-position noise propagated to the outputs through the mean gradient.

The training-set noise term is

    Sigma(X) = DeltaF^T C DeltaF,

with ``DeltaF`` the block-diagonal stack of posterior-mean gradients at the
training inputs and ``C`` the joint position-error covariance. With a rigid
array that covariance is ``I_N kron (H Sigma_x H^T)``; entries coupling two
sensors of the same timestep are ``grad_i^T Sigma_x grad_j``. The classic
NIGP treatment keeps only the diagonal.

Because the gradient depends on ``Sigma(X)`` and vice versa, the pair is
found by fixed-point iteration starting from the plain-GP solution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .array_geometry import NoiseModel, Structure
from .errors import InvalidArgumentError, NumericalError
from .gp_core import GPSystem, Posterior, TrainingSet, system_matrix
from .kernel import Hyperparameters, kernel_gradient_tensor

DEFAULT_MAX_ITER = 30


class Method(str, enum.Enum):
    GP = "GP"
    NIGP = "NIGP"
    ARRAY_NIGP = "ArrayNIGP"


METHOD_STRUCTURE = {Method.NIGP: Structure.INDEPENDENT, Method.ARRAY_NIGP: Structure.ARRAY}


@dataclass(frozen=True)
class GradientField:
    """Posterior-mean gradients at the training inputs, shape ``(n, d)``."""

    gradients: np.ndarray

    @property
    def n(self) -> int:
        return self.gradients.shape[0]

    @property
    def dimension(self) -> int:
        return self.gradients.shape[1]

    def blockdiag(self) -> np.ndarray:
        """Dense ``(d n) x n`` block-diagonal stack ``DeltaF``."""
        n, d = self.gradients.shape
        D = np.zeros((n * d, n))
        for i in range(n):
            D[i * d : (i + 1) * d, i] = self.gradients[i]
        return D

    @classmethod
    def zeros(cls, n: int, d: int) -> GradientField:
        return cls(np.zeros((n, d)))


@dataclass(frozen=True)
class InputNoiseTerm:
    """``Sigma(X)`` stored as one dense ``m x m`` block per timestep.

    ``blocks[k]`` covers the training indices ``groups[k]``; every entry
    coupling different timesteps is structurally zero.
    """

    blocks: np.ndarray
    groups: np.ndarray

    @property
    def n(self) -> int:
        return self.groups.size

    def add_to(self, A: np.ndarray) -> None:
        """Add the term in place to a dense ``n x n`` matrix."""
        g = self.groups
        A[g[:, :, None], g[:, None, :]] += self.blocks

    def dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        self.add_to(A)
        return A

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.groups] = np.diagonal(self.blocks, axis1=1, axis2=2)
        return out

    @classmethod
    def zeros(cls, groups) -> InputNoiseTerm:
        groups = np.asarray(groups, dtype=np.intp)
        N, m = groups.shape
        return cls(np.zeros((N, m, m)), groups)

    def to_dict(self) -> dict:
        return {"groups": self.groups.tolist(), "blocks": self.blocks.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> InputNoiseTerm:
        return cls(np.asarray(data["blocks"], dtype=float), np.asarray(data["groups"], dtype=np.intp))


@dataclass
class IterationReport:
    """Trace of the fixed-point loop.

    ``epsilon_history[j-1]`` is the norm of the change in the stacked gradient
    vector made by iteration ``j``.
    """

    iterations: int
    epsilon_history: list = field(default_factory=list)
    converged: bool = True
    delta_epsilon: float = 0.0
    method: str = Method.GP.value

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "epsilon_history": list(self.epsilon_history),
            "converged": self.converged,
            "delta_epsilon": self.delta_epsilon,
        }


def default_delta_epsilon(n: int, h: Hyperparameters) -> float:
    """Scale-aware stopping threshold ``1e-6 sqrt(n) sigma_f / l``."""
    return 1e-6 * math.sqrt(n) * h.signal_std / h.length_scale


def posterior_mean_gradient(
    train: TrainingSet, h: Hyperparameters, sigma_X: InputNoiseTerm | None = None
) -> GradientField:
    """Gradient of the posterior mean at every training input.

    Uses the system ``K + sigma_y**2 I + Sigma(X)``.
    """
    if sigma_X is not None and sigma_X.n != train.n:
        raise InvalidArgumentError(f"sigma_X covers {sigma_X.n} points, expected {train.n}")
    return GradientField(GPSystem(train, h, sigma_X).mean_gradient())


class _GradientSolver:
    """Repeated gradient solves on fixed inputs with a changing ``Sigma(X)``.

    Caches ``K + sigma_y**2 I`` and the kernel-gradient tensor, which do not
    change across fixed-point iterations.
    """

    def __init__(self, train: TrainingSet, h: Hyperparameters):
        self.train = train
        self.h = h
        self.base = system_matrix(train, h)
        self.dK = kernel_gradient_tensor(train.inputs, train.inputs, h)

    def __call__(self, sigma_X: InputNoiseTerm) -> GradientField:
        system = GPSystem(self.train, self.h, sigma_X, base=self.base)
        return GradientField(np.einsum("ijk,j->ik", self.dK, system.alpha))


def input_noise_term(grads: GradientField, noise: NoiseModel, groups) -> InputNoiseTerm:
    """Assemble ``Sigma(X)`` from gradients for either noise structure.

    Both structures compute the full per-timestep block
    ``G_k Sigma_x G_k^T`` the same way; the independent structure then keeps
    only its diagonal. This makes the two agree bit for bit whenever a
    timestep has a single nonzero gradient. Blocks are symmetrized so the
    term is exactly symmetric despite round-off.
    """
    groups = np.asarray(groups, dtype=np.intp)
    if groups.ndim != 2:
        raise InvalidArgumentError("groups must be an (N, m) index array")
    if groups.size != grads.n:
        raise InvalidArgumentError(
            f"groups cover {groups.size} points but {grads.n} gradients were given"
        )
    if noise.dimension != grads.dimension:
        raise InvalidArgumentError(
            f"sigma_x is {noise.dimension}-D but gradients are {grads.dimension}-D"
        )
    G = grads.gradients[groups]  # (N, m, d)
    blocks = G @ noise.sigma_x @ G.transpose(0, 2, 1)
    blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
    if noise.structure is Structure.INDEPENDENT:
        m = groups.shape[1]
        blocks = blocks * np.eye(m)[None, :, :]
    return InputNoiseTerm(blocks, groups)


def iterate(
    train: TrainingSet,
    h: Hyperparameters,
    noise: NoiseModel,
    delta_epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """Fixed-point search for the gradient / input-noise pair.

    Iteration 0 is the plain GP (``grad f = 0`` gives ``Sigma(X) = 0``) and
    yields the first gradient estimate. Each subsequent iteration ``j``
    rebuilds ``Sigma(X)`` from the previous gradients, recomputes the
    gradients and records ``eps_j = ||grad_j - grad_{j-1}||``. The loop stops
    once ``eps_j < delta_epsilon`` or after ``max_iter`` iterations.

    Returns
    -------
    (InputNoiseTerm, GradientField, IterationReport)
        The term used for the final gradients, those gradients, and the
        trace. Running out of iterations is reported, not raised.
    """
    if max_iter < 1:
        raise InvalidArgumentError("max_iter must be >= 1")
    if delta_epsilon is None:
        delta_epsilon = default_delta_epsilon(train.n, h)
    if not delta_epsilon > 0:
        raise InvalidArgumentError("delta_epsilon must be > 0")
    method = (Method.ARRAY_NIGP if noise.structure is Structure.ARRAY else Method.NIGP).value

    groups = train.groups
    solve = _GradientSolver(train, h)
    sigma_X = InputNoiseTerm.zeros(groups)
    try:
        grads = solve(sigma_X)
    except NumericalError as exc:
        exc.iteration = 0
        raise
    history = []
    converged = False
    for j in range(1, max_iter + 1):
        sigma_X = input_noise_term(grads, noise, groups)
        try:
            new = solve(sigma_X)
        except NumericalError as exc:
            exc.iteration = j
            raise
        eps = float(np.linalg.norm(new.gradients - grads.gradients))
        history.append(eps)
        grads = new
        if eps < delta_epsilon:
            converged = True
            break
    report = IterationReport(
        iterations=len(history),
        epsilon_history=history,
        converged=converged,
        delta_epsilon=float(delta_epsilon),
        method=method,
    )
    return sigma_X, grads, report


@dataclass
class MapFit:
    """A fitted map: the factored system plus the loop trace."""

    system: GPSystem
    sigma_X: InputNoiseTerm | None
    report: IterationReport
    method: Method

    def predict(self, points, full_cov: bool = True) -> Posterior:
        return self.system.predict(points, full_cov=full_cov)


def fit_model(
    train: TrainingSet,
    h: Hyperparameters,
    method,
    noise: NoiseModel | None = None,
    delta_epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> MapFit:
    """Fit one of GP / NIGP / ArrayNIGP and keep the factored system."""
    method = Method(method)
    if method is Method.GP:
        report = IterationReport(0, [], True, 0.0, method.value)
        return MapFit(GPSystem(train, h), None, report, method)
    if noise is None:
        raise InvalidArgumentError(f"method {method.value} needs a noise model")
    noise = noise.with_structure(METHOD_STRUCTURE[method])
    sigma_X, _, report = iterate(train, h, noise, delta_epsilon, max_iter)
    return MapFit(GPSystem(train, h, sigma_X), sigma_X, report, method)


def fit_map(
    train: TrainingSet,
    predict,
    h: Hyperparameters,
    method,
    noise: NoiseModel | None = None,
    delta_epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    full_cov: bool = True,
):
    """Posterior at ``predict`` under ``method`` and the iteration report.

    GP ignores ``noise``. NIGP and ArrayNIGP run :func:`iterate` with the
    independent and array-correlated structure respectively, then condition
    on ``K + sigma_y**2 I + Sigma(X)`` with deterministic prediction inputs.
    """
    fit = fit_model(train, h, method, noise, delta_epsilon, max_iter)
    return fit.predict(predict, full_cov=full_cov), fit.report
