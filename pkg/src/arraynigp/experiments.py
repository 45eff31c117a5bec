"""Synthetic scenarios and the Monte Carlo harness.

Every run owns a seed derived from ``(seed, run)``; the latent field, the
position-error draws and the measurement-noise draws come from three
independent child streams of it. Sweep cells reuse those streams (common
random numbers), so adding or removing sweep values never changes the draws
of an existing cell, and all methods within a run see exactly the same data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .array_geometry import (
    ArrayGeometry,
    NoiseModel,
    Pose,
    Structure,
    covariance_sqrt,
    trajectory_positions,
)
from .errors import InvalidArgumentError
from .gp_core import GPSystem, TrainingSet, factorize
from .input_noise import Method, fit_model
from .kernel import Hyperparameters, as_points, kernel_matrix

logger = logging.getLogger(__name__)

SCENARIOS = ("input_uncertainty", "array_length", "single_array", "beta_sweep")


def rmse(predicted, truth) -> float:
    """Root-mean-square difference of two equal-length vectors."""
    p = np.asarray(predicted, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise InvalidArgumentError("rmse of empty vectors")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _unique_rows(X):
    """Unique rows in first-occurrence order plus the inverse mapping."""
    _, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return X[np.sort(first)], rank[inverse.reshape(-1)]


def sample_gp_prior(points, h: Hyperparameters, seed=None) -> np.ndarray:
    """One draw of the zero-mean SE prior at ``points``.

    Duplicate points receive identical values. The draw is ``L z`` with ``L``
    the (possibly jittered) Cholesky factor of the kernel matrix over the
    unique points, so a leading subset of points always gets the same values
    for the same seed.
    """
    X = as_points(points)
    if X.shape[0] == 0:
        return np.zeros(0)
    U, inverse = _unique_rows(X)
    K = kernel_matrix(U, U, h)
    (L, _), _ = factorize(K, h.signal_variance)
    L = np.tril(L)
    z = np.random.default_rng(seed).standard_normal(U.shape[0])
    return (L @ z)[inverse]


# ---------------------------------------------------------------------------
# configuration and results


@dataclass
class ScenarioConfig:
    """Settings for one Monte Carlo scenario.

    ``sigma_x`` is the position-error covariance (scalar for 1-D). ``values``
    holds the swept quantity: ``sigma_x`` scalars, array lengths, or the beta
    scale factors. Defaults reproduce the 1-D input-uncertainty setting.
    """

    kind: str = "input_uncertainty"
    dimension: int = 1
    domain: list = field(default_factory=lambda: [[0.0, 5.0]])
    n_centers: int = 60
    sensors_per_array: int = 5
    array_length: float = 0.5
    length_scale: float = 0.5
    signal_variance: float = 1.0
    noise_variance: float = 0.001
    sigma_x: float | list = 0.05
    mc_runs: int = 100
    seed: int = 0
    methods: list = field(default_factory=lambda: ["GP", "NIGP", "ArrayNIGP"])
    grid_resolution: int = 200
    values: list = field(default_factory=list)
    delta_epsilon: float | None = None
    max_iter: int = 30
    # single-array case
    input_error: float = 0.5
    # beta sweep (3-D analog)
    array_size: list = field(default_factory=lambda: [0.32, 0.22])
    array_grid: list = field(default_factory=lambda: [6, 5])
    timesteps: int = 40
    path_side: float = 3.0
    path_height: float = 0.1
    grid_padding: float = 1.0

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise InvalidArgumentError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIOS}")
        if self.mc_runs < 1:
            raise InvalidArgumentError("mc_runs must be >= 1")
        if self.array_length < 0:
            raise InvalidArgumentError("array_length must be >= 0")
        if self.sensors_per_array < 1:
            raise InvalidArgumentError("sensors_per_array must be >= 1")
        valid = [m.value for m in Method]
        bad = [m for m in self.methods if m not in valid]
        if bad or not self.methods:
            raise InvalidArgumentError(f"methods must be a nonempty subset of {valid}, got {self.methods}")
        self.methods = [Method(m).value for m in self.methods]
        self.hyper  # validates
        try:
            self.noise_model()
            if self.kind == "input_uncertainty":
                for v in self.values:
                    self.noise_model(v)
            elif self.kind == "beta_sweep":
                for v in self.values:
                    self.noise_model(np.diag([v, v, 0.0]))
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"scenario config: {exc}") from None

    @property
    def hyper(self) -> Hyperparameters:
        return Hyperparameters(self.length_scale, self.signal_variance, self.noise_variance)

    def noise_model(self, sigma_x=None) -> NoiseModel:
        S = self.sigma_x if sigma_x is None else sigma_x
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape == (1, 1) and self.dimension > 1:
            S = S[0, 0] * np.eye(self.dimension)
        return NoiseModel(S, Structure.ARRAY)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SweepResult:
    """Per-cell, per-method aggregates plus the raw per-run records.

    ``records`` rows are dicts with keys ``value, run, method, rmse,
    mean_var, trace_var, iterations, converged, raw_min_variance, jitter``.
    """

    config: dict
    values: list
    methods: list
    records: list = field(default_factory=list)

    def cell(self, value, method) -> list:
        return [r for r in self.records if r["value"] == value and r["method"] == method]

    def summary(self) -> list:
        rows = []
        for v in self.values:
            for m in self.methods:
                recs = self.cell(v, m)
                r = np.array([x["rmse"] for x in recs])
                var = np.array([x["mean_var"] for x in recs])
                rows.append(
                    {
                        "value": v,
                        "method": m,
                        "mean_rmse": float(r.mean()),
                        "std_rmse": float(r.std()),
                        "mean_var": float(var.mean()),
                        "std_var": float(var.std()),
                    }
                )
        return rows

    def mean(self, value, method, key="rmse") -> float:
        return float(np.mean([x[key] for x in self.cell(value, method)]))


# ---------------------------------------------------------------------------
# per-run machinery


def _run_streams(seed: int, run: int):
    ss = np.random.SeedSequence(seed, spawn_key=(run,))
    return ss.spawn(3)  # latent, position error, measurement noise


def prediction_grid(domain, resolution) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def _grid_stats(posterior):
    return float(np.mean(posterior.variance)), float(np.sum(posterior.variance))


def _evaluate_methods(cfg, train_noisy, grid, truth, noise, value, run, methods=None):
    """Fit each method on the same data and score it against ``truth``."""
    h = cfg.hyper
    out = []
    for name in methods or cfg.methods:
        fit = fit_model(train_noisy, h, name, noise, cfg.delta_epsilon, cfg.max_iter)
        post = fit.predict(grid, full_cov=False)
        mean_var, trace_var = _grid_stats(post)
        out.append(
            {
                "value": value,
                "run": run,
                "method": name,
                "rmse": rmse(post.mean + train_noisy.output_mean, truth),
                "mean_var": mean_var,
                "trace_var": trace_var,
                "iterations": fit.report.iterations,
                "converged": fit.report.converged,
                "raw_min_variance": post.raw_min_variance,
                "jitter": fit.system.jitter,
            }
        )
    return out


def _line_scenario_data(cfg, length, run):
    """Latent field, true positions and measurements for one 1-D run."""
    h = cfg.hyper
    lat_ss, pos_ss, meas_ss = _run_streams(cfg.seed, run)
    (lo, hi), = cfg.domain
    centers = np.linspace(lo, hi, cfg.n_centers)
    geom = ArrayGeometry.line(cfg.sensors_per_array, length, d=1)
    true_pos = centers[:, None] + geom.offsets[None, :, 0]  # (N, m)
    grid = prediction_grid(cfg.domain, cfg.grid_resolution)
    pts = np.concatenate([grid[:, 0], true_pos.ravel()])
    f = sample_gp_prior(pts, h, np.random.default_rng(lat_ss))
    f_grid = f[: grid.shape[0]]
    f_true = f[grid.shape[0] :].reshape(true_pos.shape)
    eps = np.random.default_rng(meas_ss).standard_normal(true_pos.shape)
    y = f_true + math.sqrt(h.noise_variance) * eps
    z_pos = np.random.default_rng(pos_ss).standard_normal((cfg.n_centers, 1))
    return grid, f_grid, true_pos, y, z_pos


def _perturbed(true_pos, z_pos, noise: NoiseModel):
    """Add the shared per-timestep error ``A z`` to ``(N, m, d)`` positions."""
    A = covariance_sqrt(noise.sigma_x)
    e = z_pos @ A.T  # (N, d)
    X = np.asarray(true_pos, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    return X + e[:, None, :]


def _input_uncertainty_task(cfg, run, values):
    grid, f_grid, true_pos, y, z_pos = _line_scenario_data(cfg, cfg.array_length, run)
    out = []
    for v in values:
        noise = cfg.noise_model(v)
        train = TrainingSet.from_timesteps(_perturbed(true_pos, z_pos, noise), y, center=False)
        out += _evaluate_methods(cfg, train, grid, f_grid, noise, v, run)
    return out


def _array_length_task(cfg, run, values):
    noise = cfg.noise_model()
    out = []
    for v in values:
        grid, f_grid, true_pos, y, z_pos = _line_scenario_data(cfg, v, run)
        train = TrainingSet.from_timesteps(_perturbed(true_pos, z_pos, noise), y, center=False)
        out += _evaluate_methods(cfg, train, grid, f_grid, noise, v, run)
    return out


def _map_runs(task, cfg, values, workers):
    """Evaluate ``task(cfg, run, values)`` for every run, in run order."""
    args = [(cfg, run, values) for run in range(cfg.mc_runs)]
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(task, *zip(*args)))
    else:
        chunks = [task(*a) for a in args]
    return [rec for chunk in chunks for rec in chunk]


def _sweep(cfg, values, task, methods, workers) -> SweepResult:
    values = [float(v) for v in values]
    if not values:
        raise InvalidArgumentError("a sweep needs at least one value")
    records = _map_runs(task, cfg, values, workers)
    records.sort(key=lambda r: (values.index(r["value"]), r["run"], methods.index(r["method"])))
    return SweepResult(
        config=cfg.to_dict() | {"values": values},
        values=values,
        methods=list(methods),
        records=records,
    )


def run_input_uncertainty_sweep(cfg: ScenarioConfig, sigma_x_values=None, workers: int = 1) -> SweepResult:
    """RMSE / variance versus position-error variance for a 1-D line array."""
    if cfg.dimension != 1:
        raise InvalidArgumentError("the input-uncertainty sweep is 1-D")
    values = cfg.values if sigma_x_values is None else sigma_x_values
    return _sweep(cfg, values, _input_uncertainty_task, cfg.methods, workers)


def run_array_length_sweep(cfg: ScenarioConfig, lengths=None, workers: int = 1) -> SweepResult:
    """RMSE / variance versus array length at fixed ``cfg.sigma_x``."""
    if cfg.dimension != 1:
        raise InvalidArgumentError("the array-length sweep is 1-D")
    values = cfg.values if lengths is None else lengths
    return _sweep(cfg, values, _array_length_task, cfg.methods, workers)


@dataclass
class SingleArrayCase:
    """Output of :func:`run_single_array_case`.

    ``latent_shifted`` holds the latent evaluated at ``grid - input_error``.
    """

    grid: np.ndarray
    latent_grid: np.ndarray
    latent_shifted: np.ndarray
    true_inputs: np.ndarray
    noisy_inputs: np.ndarray
    outputs: np.ndarray
    posteriors: dict
    reports: dict
    input_error: float

    def array_span(self) -> np.ndarray:
        """Mask of grid points inside the span of the (noisy) sensor positions."""
        lo, hi = self.noisy_inputs.min(), self.noisy_inputs.max()
        return (self.grid >= lo - 1e-12) & (self.grid <= hi + 1e-12)


def run_single_array_case(cfg: ScenarioConfig, run: int = 0) -> SingleArrayCase:
    """All measurements from one array, fixed position error, no noise.

    The array sits so that its noisy positions are centered in the domain.
    The latent is drawn jointly on the grid, the shifted grid and the sensors
    so the shifted comparison needs no interpolation.
    """
    h = Hyperparameters(cfg.length_scale, cfg.signal_variance, cfg.noise_variance)
    lat_ss, _, _ = _run_streams(cfg.seed, run)
    (lo, hi), = cfg.domain
    ex = float(cfg.input_error)
    geom = ArrayGeometry.line(cfg.sensors_per_array, cfg.array_length, d=1)
    true_pos = 0.5 * (lo + hi) - ex / 2 + geom.offsets[:, 0]
    grid = prediction_grid(cfg.domain, cfg.grid_resolution)[:, 0]
    pts = np.concatenate([grid, grid - ex, true_pos])
    f = sample_gp_prior(pts, h, np.random.default_rng(lat_ss))
    g = grid.size
    f_grid, f_shift, f_true = f[:g], f[g : 2 * g], f[2 * g :]
    y = f_true + math.sqrt(h.noise_variance) * np.random.default_rng(
        _run_streams(cfg.seed, run)[2]
    ).standard_normal(f_true.shape)
    noisy = true_pos + ex
    train = TrainingSet.from_timesteps(noisy[None, :], y[None, :], center=False)
    noise = cfg.noise_model()
    posteriors, reports = {}, {}
    for name in cfg.methods:
        fit = fit_model(train, h, name, noise, cfg.delta_epsilon, cfg.max_iter)
        posteriors[name] = fit.predict(grid[:, None], full_cov=False)
        reports[name] = fit.report
    return SingleArrayCase(
        grid=grid,
        latent_grid=f_grid,
        latent_shifted=f_shift,
        true_inputs=true_pos,
        noisy_inputs=noisy,
        outputs=y,
        posteriors=posteriors,
        reports=reports,
        input_error=ex,
    )


# ---------------------------------------------------------------------------
# 3-D analog of the field experiment


def square_path_poses(cfg: ScenarioConfig):
    """Array poses evenly spaced around a square, heading along the path."""
    side = cfg.path_side
    s = np.linspace(0.0, 4 * side, cfg.timesteps, endpoint=False)
    poses = []
    for t in s:
        leg, u = divmod(t, side)
        leg = int(leg)
        half = side / 2
        if leg == 0:
            xy, yaw = (-half + u, -half), 0.0
        elif leg == 1:
            xy, yaw = (half, -half + u), math.pi / 2
        elif leg == 2:
            xy, yaw = (half - u, half), math.pi
        else:
            xy, yaw = (-half, half - u), -math.pi / 2
        c, sn = math.cos(yaw), math.sin(yaw)
        R = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
        poses.append(Pose(np.array([xy[0], xy[1], cfg.path_height]), R))
    return poses


def _beta_scenario(cfg, run):
    """True positions, grid, reference-GP mean and measurements for one run."""
    h = cfg.hyper
    lat_ss, pos_ss, meas_ss = _run_streams(cfg.seed, run)
    nx, ny = cfg.array_grid
    sx, sy = cfg.array_size
    geom = ArrayGeometry.grid(nx, ny, sx, sy, d=3)
    true_pos = trajectory_positions(square_path_poses(cfg), geom)  # (N, m, 3)
    flat = true_pos.reshape(-1, 3)
    pad = cfg.grid_padding
    lo = flat[:, :2].min(axis=0) - pad
    hi = flat[:, :2].max(axis=0) + pad
    grid2 = prediction_grid([[lo[0], hi[0]], [lo[1], hi[1]]], cfg.grid_resolution)
    grid = np.column_stack([grid2, np.full(grid2.shape[0], cfg.path_height)])
    f = sample_gp_prior(flat, h, np.random.default_rng(lat_ss))
    eps = np.random.default_rng(meas_ss).standard_normal(f.shape)
    y = (f + math.sqrt(h.noise_variance) * eps).reshape(true_pos.shape[:2])
    z_pos = np.random.default_rng(pos_ss).standard_normal((true_pos.shape[0], 3))
    train_true = TrainingSet.from_timesteps(true_pos, y, center=True)
    reference = GPSystem(train_true, h).predict(grid, full_cov=False)
    return true_pos, y, z_pos, grid, reference.mean + train_true.output_mean


def _beta_task(cfg, run, values):
    true_pos, y, z_pos, grid, ref_mean = _beta_scenario(cfg, run)
    methods = [m for m in cfg.methods if m != Method.GP.value]
    out = []
    for beta in values:
        noise = cfg.noise_model(np.diag([beta, beta, 0.0]))
        train = TrainingSet.from_timesteps(_perturbed(true_pos, z_pos, noise), y, center=True)
        out += _evaluate_methods(cfg, train, grid, ref_mean, noise, beta, run, methods)
    return out


def run_beta_sweep(cfg: ScenarioConfig, beta_values=None, workers: int = 1) -> SweepResult:
    """NIGP vs ArrayNIGP against a GP fitted on the true positions.

    Position errors use ``Sigma_x = diag(beta, beta, 0)``.
    """
    values = cfg.values if beta_values is None else beta_values
    methods = [m for m in cfg.methods if m != Method.GP.value]
    return _sweep(cfg, values, _beta_task, methods, workers)


def beta_gap_trend(result: SweepResult) -> float:
    """Spearman correlation between beta and the NIGP minus ArrayNIGP RMSE gap."""
    gaps = [
        result.mean(v, Method.NIGP.value) - result.mean(v, Method.ARRAY_NIGP.value)
        for v in result.values
    ]
    return float(stats.spearmanr(result.values, gaps).statistic)


def run_scenario(cfg: ScenarioConfig, workers: int = 1):
    """Dispatch on ``cfg.kind``."""
    if cfg.kind == "input_uncertainty":
        return run_input_uncertainty_sweep(cfg, workers=workers)
    if cfg.kind == "array_length":
        return run_array_length_sweep(cfg, workers=workers)
    if cfg.kind == "beta_sweep":
        return run_beta_sweep(cfg, workers=workers)
    return run_single_array_case(cfg)


def default_config(kind: str, **overrides) -> ScenarioConfig:
    """Scenario defaults for each kind; ``overrides`` replace fields."""
    base = ScenarioConfig(kind=kind)
    if kind == "input_uncertainty":
        base = replace(base, values=[0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.25])
    elif kind == "array_length":
        base = replace(base, sigma_x=0.05, values=[0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0])
    elif kind == "single_array":
        base = replace(
            base,
            sensors_per_array=10,
            array_length=2.0,
            domain=[[0.0, 3.0]],
            noise_variance=0.0,
            input_error=0.5,
            sigma_x=0.25,
            mc_runs=1,
        )
    elif kind == "beta_sweep":
        base = replace(
            base,
            dimension=3,
            domain=[],
            length_scale=0.559,
            signal_variance=4.90e-3,
            noise_variance=5.31e-4,
            sensors_per_array=30,
            mc_runs=20,
            grid_resolution=50,
            methods=["NIGP", "ArrayNIGP"],
            values=[0.01, 0.05, 0.1, 0.15, 0.2],
        )
    return replace(base, **overrides)
