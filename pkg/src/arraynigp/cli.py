"""Command-line interface.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import fileio
from .array_geometry import NoiseModel, Structure, sensor_positions
from .calibration import NORM_MODES, SQUARED, apply_calibration, center_outputs
from .errors import InvalidArgumentError, NumericalError
from .experiments import (
    SCENARIOS,
    ScenarioConfig,
    default_config,
    run_scenario,
    sample_gp_prior,
)
from .gp_core import GPSystem, TrainingSet, fit_hyperparameters
from .input_noise import Method, fit_model
from .kernel import Hyperparameters

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("arraynigp")


class UsageError(InvalidArgumentError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def parse_floats(text: str, name: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def parse_hyper(text: str) -> Hyperparameters:
    vals = parse_floats(text, "--hyper")
    if len(vals) not in (2, 3):
        raise UsageError("--hyper expects 'l,sigma_f2[,sigma_y2]' or 'fit'")
    return Hyperparameters(*vals)


def parse_sigma_x(text: str, d: int) -> np.ndarray:
    """Scalar (isotropic), ``d`` comma values (diagonal) or a JSON matrix."""
    text = text.strip()
    if text.startswith("["):
        S = np.asarray(json.loads(text), dtype=float)
        return np.atleast_2d(S)
    vals = parse_floats(text, "--sigma-x")
    if len(vals) == 1:
        return vals[0] * np.eye(d)
    if len(vals) == d:
        return np.diag(vals)
    raise UsageError(f"--sigma-x needs 1 or {d} values or a JSON matrix")


def parse_grid(text: str, d: int) -> np.ndarray:
    """``lo:hi:n`` per axis, comma separated."""
    axes = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise UsageError(f"--grid axis {part!r} must be lo:hi:n")
        try:
            lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
        except ValueError:
            raise UsageError(f"--grid axis {part!r} must be lo:hi:n") from None
        axes.append(np.linspace(lo, hi, n))
    if len(axes) != d:
        raise UsageError(f"--grid has {len(axes)} axes, data is {d}-D")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def parse_override(item: str):
    if "=" not in item:
        raise UsageError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path) -> dict:
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            return fileio.read_json(path)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _coord_names(d):
    return ["x", "y", "z"][:d]


def _write_table(out_dir, stem, fmt, header, rows, meta):
    """Write ``rows`` as CSV (plus ``.meta.json`` sidecar) or as one JSON file."""
    out_dir = Path(out_dir)
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        fileio.write_json(path, {"columns": header, "rows": rows, "metadata": meta})
        return [path]
    path = out_dir / f"{stem}.csv"
    fileio.write_csv(path, header, rows)
    side = fileio.write_json(out_dir / f"{stem}.meta.json", meta)
    return [path, side]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    raw = load_config(args.config)
    if not isinstance(raw, dict):
        raise UsageError("config must be a table / object")
    raw = dict(raw)
    for item in args.set or []:
        k, v = parse_override(item)
        raw[k] = v
    if args.seed is not None:
        raw["seed"] = args.seed
    kind = raw.get("kind")
    if kind not in SCENARIOS:
        raise UsageError(f"config 'kind' must be one of {SCENARIOS}, got {kind!r}")
    defaults = default_config(kind).to_dict()
    unknown = set(raw) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = ScenarioConfig.from_dict(defaults | raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise
        raise UsageError(f"invalid config: {exc}") from None
    workers = args.threads or 1
    out_dir = Path(args.output_dir)
    meta = fileio.metadata(command="simulate", seed=cfg.seed, config=cfg.to_dict())
    result = run_scenario(cfg, workers=workers)
    stem = cfg.kind
    if cfg.kind == "single_array":
        header = ["x", "latent", "latent_shifted"]
        cols = [result.grid, result.latent_grid, result.latent_shifted]
        for name, post in result.posteriors.items():
            header += [f"mean_{name}", f"var_{name}"]
            cols += [post.mean, post.variance]
        rows = [list(r) for r in zip(*cols)]
        fileio.write_csv(out_dir / f"{stem}.csv", header, rows)
        fileio.write_json(
            out_dir / f"{stem}.json",
            {
                "metadata": meta,
                "true_inputs": result.true_inputs,
                "noisy_inputs": result.noisy_inputs,
                "outputs": result.outputs,
                "input_error": result.input_error,
                "reports": {k: v.to_dict() for k, v in result.reports.items()},
            },
        )
    else:
        fileio.sweep_to_csv(out_dir / f"{stem}.csv", result)
        fileio.sweep_to_json(out_dir / f"{stem}.json", result, meta)
    print(f"wrote {out_dir / (stem + '.csv')} and {out_dir / (stem + '.json')}")
    return 0


def cmd_calibrate(args) -> int:
    t, sids, readings = fileio.load_raw_log(args.raw)
    if len(t) == 0:
        raise UsageError(f"{args.raw}: measurement log is empty")
    cals = fileio.load_calibration(args.calibration)
    missing = sorted({s for s in sids if s not in cals})
    if missing:
        raise UsageError(f"no calibration entry for sensor_id(s): {', '.join(missing)}")
    values = np.empty(len(t))
    for sid in dict.fromkeys(sids):
        mask = np.array([s == sid for s in sids])
        values[mask] = apply_calibration(readings[mask], cals[sid], args.norm_mode)
    centered, mean = center_outputs(values)
    meta = fileio.metadata(
        command="calibrate",
        raw=str(args.raw),
        calibration=str(args.calibration),
        norm_mode=args.norm_mode,
        output_mean=mean,
    )
    rows = [[ti, s, yi] for ti, s, yi in zip(t, sids, centered)]
    paths = _write_table(args.output_dir, "calibrated", args.format, ["t", "sensor_id", "y"], rows, meta)
    print("wrote " + ", ".join(map(str, paths)))
    return 0


def _sensor_index(geometry_path, m):
    data = fileio.read_json(geometry_path)
    ids = data.get("sensor_ids")
    if ids is None:
        ids = [str(i) for i in range(m)]
    ids = [str(i) for i in ids]
    if len(ids) != m:
        raise UsageError(f"{geometry_path}: {len(ids)} sensor_ids for {m} offsets")
    return {s: i for i, s in enumerate(ids)}


def assemble_training_set(measurements, poses_path, geometry_path, center=True):
    """Join measurements to poses on ``t`` and place every sensor.

    Returns ``(train, true_positions (N, m, d), timestamps)``.
    """
    geom = fileio.load_geometry(geometry_path)
    m = geom.m
    index = _sensor_index(geometry_path, m)
    tm, sids, y = fileio.load_measurements(measurements)
    if len(tm) == 0:
        raise UsageError(f"{measurements}: no measurements")
    tp, poses = fileio.load_poses(poses_path)
    pose_at = {float(t): p for t, p in zip(tp, poses)}
    times = sorted(set(float(t) for t in tm))
    missing = [t for t in times if t not in pose_at]
    if missing:
        raise UsageError(
            "measurements without a matching pose at t = " + ", ".join(fileio.fmt(t) for t in missing)
        )
    unknown = sorted({s for s in sids if s not in index})
    if unknown:
        raise UsageError(f"sensor_id(s) not in geometry: {', '.join(unknown)}")
    values = np.full((len(times), m), np.nan)
    row_of = {t: k for k, t in enumerate(times)}
    for t, s, v in zip(tm, sids, y):
        values[row_of[float(t)], index[s]] = v
    incomplete = [times[k] for k in range(len(times)) if np.isnan(values[k]).any()]
    if incomplete:
        raise UsageError(
            f"timesteps missing some of the {m} sensors at t = "
            + ", ".join(fileio.fmt(t) for t in incomplete)
        )
    if pose_at[times[0]].center.shape[0] != geom.dimension:
        raise UsageError("pose dimension does not match geometry dimension")
    positions = np.stack([sensor_positions(pose_at[t], geom) for t in times])
    train = TrainingSet.from_timesteps(positions, values, center=center)
    return train, positions, times


def cmd_fit_map(args) -> int:
    train, _, times = assemble_training_set(
        args.measurements, args.poses, args.geometry, center=not args.no_center
    )
    d = train.dimension
    method = Method(args.method)
    fit_info = None
    if args.hyper.strip().lower() == "fit":
        if not args.hyper_init:
            raise UsageError("--hyper fit requires --hyper-init l,sigma_f2,sigma_y2")
        init = parse_hyper(args.hyper_init)
        fit = fit_hyperparameters(train, init, starts=args.starts, seed=args.seed or 0)
        h = fit.hyper
        fit_info = fit.settings()
    else:
        h = parse_hyper(args.hyper)
    noise = None
    if method is not Method.GP:
        if args.sigma_x is None:
            raise UsageError(f"--sigma-x is required for method {method.value}")
        noise = NoiseModel(parse_sigma_x(args.sigma_x, d), Structure.ARRAY)
    if args.points:
        grid = fileio.load_points(args.points, d)
    elif args.grid:
        grid = parse_grid(args.grid, d)
    else:
        raise UsageError("give --grid or --points")
    model = fit_model(train, h, method, noise, args.delta_epsilon, args.max_iter)
    post = model.predict(grid, full_cov=False)
    mean = post.mean_with_offset(train.output_mean)
    config = {
        "measurements": str(args.measurements),
        "poses": str(args.poses),
        "geometry": str(args.geometry),
        "method": method.value,
        "hyperparameters": h.to_dict(),
        "hyper_fit": fit_info,
        "noise": None if noise is None else noise.to_dict(),
        "delta_epsilon": args.delta_epsilon,
        "max_iter": args.max_iter,
        "centered": not args.no_center,
        "output_mean": train.output_mean,
        "timesteps": len(times),
        "seed": args.seed,
    }
    meta = fileio.metadata(command="fit-map", config=config, report=model.report.to_dict())
    header = _coord_names(d) + ["mean", "variance"]
    rows = [list(p) + [mu, v] for p, mu, v in zip(grid, mean, post.variance)]
    out = Path(args.output_dir)
    paths = _write_table(out, "map", args.format, header, rows, meta)
    paths.append(fileio.write_json(out / "map.report.json", meta))
    paths.append(
        fileio.write_json(
            out / "model.json",
            fileio.model_to_dict(train, h, method.value, noise, model.sigma_X, {"config": config}),
        )
    )
    print("wrote " + ", ".join(map(str, paths)))
    return 0


def cmd_predict(args) -> int:
    train, h, sigma_X, data = fileio.model_from_dict(fileio.read_json(args.model))
    d = train.dimension
    points = fileio.load_points(args.points, d)
    post = GPSystem(train, h, sigma_X).predict(points, full_cov=False)
    mean = post.mean_with_offset(train.output_mean)
    meta = fileio.metadata(command="predict", model=str(args.model), points=str(args.points),
                           method=data.get("method"))
    header = _coord_names(d) + ["mean", "variance"]
    rows = [list(p) + [mu, v] for p, mu, v in zip(points, mean, post.variance)]
    paths = _write_table(args.output_dir, "predictions", args.format, header, rows, meta)
    print("wrote " + ", ".join(map(str, paths)))
    return 0


def cmd_sample_prior(args) -> int:
    points = fileio.load_points(args.points)
    h = parse_hyper(args.hyper)
    seed = 0 if args.seed is None else args.seed
    f = sample_gp_prior(points, h, seed)
    meta = fileio.metadata(command="sample-prior", seed=seed, hyperparameters=h.to_dict(),
                           points=str(args.points))
    header = _coord_names(points.shape[1]) + ["f"]
    rows = [list(p) + [v] for p, v in zip(points, f)]
    paths = _write_table(args.output_dir, "prior_sample", args.format, header, rows, meta)
    print("wrote " + ", ".join(map(str, paths)))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for Monte Carlo runs")
    common.add_argument("--output-dir", default=".", help="directory for result files")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table output format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="arraynigp",
        description="Noisy-input GP maps from rigid sensor arrays.",
    )
    p.add_argument("--version", action="version", version=f"arraynigp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo scenario")
    s.add_argument("config", help="TOML or JSON scenario file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", parents=[common], help="raw readings -> centered scalar outputs")
    c.add_argument("raw", help="CSV with t, sensor_id, mx, my, mz")
    c.add_argument("calibration", help="JSON list of {sensor_id, D, b}")
    c.add_argument("--norm-mode", choices=NORM_MODES, default=SQUARED)
    c.set_defaults(func=cmd_calibrate)

    f = sub.add_parser("fit-map", parents=[common], help="fit a map from array measurements")
    f.add_argument("--measurements", required=True, help="CSV with t, sensor_id, y")
    f.add_argument("--poses", required=True, help="pose CSV")
    f.add_argument("--geometry", required=True, help="array geometry JSON")
    f.add_argument("--method", choices=[m.value for m in Method], required=True)
    f.add_argument("--hyper", required=True, help="'l,sigma_f2,sigma_y2' or 'fit'")
    f.add_argument("--hyper-init", help="starting point when --hyper fit")
    f.add_argument("--starts", type=int, default=5, help="multi-start count for --hyper fit")
    f.add_argument("--sigma-x", help="position-error covariance: scalar, diagonal or JSON matrix")
    f.add_argument("--grid", help="prediction grid lo:hi:n per axis, comma separated")
    f.add_argument("--points", help="prediction points CSV (x[,y[,z]])")
    f.add_argument("--delta-epsilon", type=float, default=None)
    f.add_argument("--max-iter", type=int, default=30)
    f.add_argument("--no-center", action="store_true", help="do not subtract the output mean")
    f.set_defaults(func=cmd_fit_map)

    q = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    q.add_argument("model", help="model.json written by fit-map")
    q.add_argument("points", help="points CSV (x[,y[,z]])")
    q.set_defaults(func=cmd_predict)

    r = sub.add_parser("sample-prior", parents=[common], help="draw from the SE prior")
    r.add_argument("--points", required=True, help="points CSV (x[,y[,z]])")
    r.add_argument("--hyper", required=True, help="l,sigma_f2[,sigma_y2]")
    r.set_defaults(func=cmd_sample_prior)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        where = "" if exc.iteration is None else f" (iteration {exc.iteration})"
        print(f"arraynigp: numerical error{where}: {exc}", file=sys.stderr)
        return 3
    except (InvalidArgumentError, OSError, KeyError) as exc:
        print(f"arraynigp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
