"""File formats: geometry, poses, calibration, logs, models and results.

Floats are written with ``repr`` (shortest round-trip form) so repeated runs
produce byte-identical files. All writes go through a temporary file in the
target directory followed by an atomic rename.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .array_geometry import ArrayGeometry, NoiseModel, Pose
from .calibration import SensorCalibration
from .errors import InvalidArgumentError
from .gp_core import TrainingSet
from .input_noise import InputNoiseTerm
from .kernel import Hyperparameters

MODEL_FORMAT = "arraynigp-model"
MODEL_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, data) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path):
    """Return ``(header, rows)`` with rows as lists of strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file (missing header row)") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    return header, rows


def _columns(path, header, rows, names):
    missing = [n for n in names if n not in header]
    if missing:
        raise InvalidArgumentError(f"{path}: missing column(s) {missing}")
    idx = [header.index(n) for n in names]
    try:
        return [[float(r[i]) for r in rows] for i in idx]
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"{path}: malformed row ({exc})") from None


def metadata(**extra) -> dict:
    return {"library": "arraynigp", "version": __version__} | extra


# ---------------------------------------------------------------------------
# geometry and poses


def load_geometry(path) -> ArrayGeometry:
    data = read_json(path)
    try:
        d = int(data["dimension"])
        offsets = np.asarray(data["offsets"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{path}: invalid geometry file ({exc})") from None
    if offsets.ndim == 1 and d == 1:
        offsets = offsets[:, None]
    if offsets.ndim != 2 or offsets.shape[1] != d:
        raise InvalidArgumentError(f"{path}: offsets must be a list of {d}-vectors")
    return ArrayGeometry(offsets)


def save_geometry(path, geom: ArrayGeometry) -> Path:
    return write_json(path, {"dimension": geom.dimension, "offsets": geom.offsets})


def load_poses(path) -> tuple[np.ndarray, list]:
    """Read a pose log; returns ``(t, poses)``.

    3-D logs carry ``px, py, pz, qw, qx, qy, qz``; 2-D logs ``px, py,
    theta``; 1-D logs just ``px``.
    """
    header, rows = read_csv(path)
    if not rows:
        raise InvalidArgumentError(f"{path}: no poses")
    if "qw" in header:
        t, px, py, pz, qw, qx, qy, qz = _columns(
            path, header, rows, ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
        )
        poses = [
            Pose.from_quaternion([a, b, c], w, x, y, z)
            for a, b, c, w, x, y, z in zip(px, py, pz, qw, qx, qy, qz)
        ]
    elif "theta" in header:
        t, px, py, th = _columns(path, header, rows, ["t", "px", "py", "theta"])
        poses = [Pose.from_heading([a, b], c) for a, b, c in zip(px, py, th)]
    else:
        t, px = _columns(path, header, rows, ["t", "px"])
        poses = [Pose([a]) for a in px]
    return np.asarray(t), poses


# ---------------------------------------------------------------------------
# calibration inputs


def load_calibration(path) -> dict:
    data = read_json(path)
    if not isinstance(data, list):
        raise InvalidArgumentError(f"{path}: expected a list of calibration entries")
    out = {}
    for entry in data:
        try:
            sid = str(entry["sensor_id"])
            out[sid] = SensorCalibration(np.asarray(entry["D"], float), np.asarray(entry["b"], float))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"{path}: invalid calibration entry ({exc})") from None
    return out


def load_raw_log(path):
    """Raw log rows as ``(t, sensor_ids, readings (n, 3))``."""
    header, rows = read_csv(path)
    for name in ("t", "sensor_id", "mx", "my", "mz"):
        if name not in header:
            raise InvalidArgumentError(f"{path}: missing column {name!r}")
    it, isid = header.index("t"), header.index("sensor_id")
    t = np.array([float(r[it]) for r in rows])
    sids = [r[isid].strip() for r in rows]
    mx, my, mz = _columns(path, header, rows, ["mx", "my", "mz"])
    return t, sids, np.column_stack([mx, my, mz]) if rows else np.zeros((0, 3))


def load_measurements(path):
    """Scalar measurement log ``t, sensor_id, y``."""
    header, rows = read_csv(path)
    for name in ("t", "sensor_id", "y"):
        if name not in header:
            raise InvalidArgumentError(f"{path}: missing column {name!r}")
    it, isid = header.index("t"), header.index("sensor_id")
    t = np.array([float(r[it]) for r in rows])
    sids = [r[isid].strip() for r in rows]
    (y,) = _columns(path, header, rows, ["y"])
    return t, sids, np.asarray(y)


def load_points(path, d: int | None = None) -> np.ndarray:
    """Point list CSV with columns ``x`` [, ``y`` [, ``z``]]."""
    header, rows = read_csv(path)
    names = [c for c in ("x", "y", "z") if c in header]
    if not names:
        raise InvalidArgumentError(f"{path}: expected columns x[, y[, z]]")
    if d is not None:
        if len(names) < d:
            raise InvalidArgumentError(f"{path}: need {d} coordinate columns")
        names = names[:d]
    cols = _columns(path, header, rows, names)
    return np.column_stack(cols) if rows else np.zeros((0, len(names)))


# ---------------------------------------------------------------------------
# models


def model_to_dict(train: TrainingSet, h: Hyperparameters, method: str, noise: NoiseModel | None,
                  sigma_X: InputNoiseTerm | None, extra: dict | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "method": method,
        "hyperparameters": h.to_dict(),
        "inputs": train.inputs,
        "outputs": train.outputs,
        "output_mean": train.output_mean,
        "groups": train.groups,
        "noise": None if noise is None else noise.to_dict(),
        "sigma_X": None if sigma_X is None else sigma_X.to_dict(),
        "metadata": metadata(**(extra or {})),
    }


def model_from_dict(data: dict):
    """Inverse of :func:`model_to_dict`; returns ``(train, h, sigma_X, data)``."""
    if data.get("format") != MODEL_FORMAT:
        raise InvalidArgumentError("not an arraynigp model file")
    if data.get("version") != MODEL_VERSION:
        raise InvalidArgumentError(
            f"unsupported model version {data.get('version')!r} (supported: {MODEL_VERSION})"
        )
    train = TrainingSet(
        np.asarray(data["inputs"], float),
        np.asarray(data["outputs"], float),
        float(data["output_mean"]),
        np.asarray(data["groups"], np.intp),
    )
    h = Hyperparameters.from_dict(data["hyperparameters"])
    sigma_X = None if data.get("sigma_X") is None else InputNoiseTerm.from_dict(data["sigma_X"])
    return train, h, sigma_X, data


def sweep_to_csv(path, result) -> Path:
    header = ["value", "method", "mean_rmse", "std_rmse", "mean_var", "std_var"]
    rows = [[r[k] for k in header] for r in result.summary()]
    return write_csv(path, header, rows)


def sweep_to_json(path, result, extra: dict | None = None) -> Path:
    return write_json(
        path,
        {
            "config": result.config,
            "values": result.values,
            "methods": result.methods,
            "summary": result.summary(),
            "records": result.records,
            "metadata": metadata(**(extra or {})),
        },
    )
