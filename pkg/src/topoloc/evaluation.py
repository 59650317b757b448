"""Localization error metrics and run reports.

Errors compare the estimated and true relative pose between the live sensor
frame and the sensor frame of the matched map vertex, expressed in the live
sensor frame and projected onto the ground plane.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import liegroup as lg
from .errors import DegenerateInputError, FormatError
from .localization import se2_project
from .persistence import (
    POSE_COLUMNS,
    TWIST_COLUMNS,
    load_graph,
    read_meta,
    read_trajectory,
    read_tsv,
    storage_bytes,
    transform_from_list,
    write_tsv,
)

log = logging.getLogger(__name__)

BIN_METERS = 0.01
BIN_DEGREES = 0.01


@dataclass(frozen=True)
class ErrorRecord:
    time: float
    lateral: float
    longitudinal: float
    heading: float  # rad

    def __post_init__(self):
        if not np.all(np.isfinite([self.time, self.lateral, self.longitudinal, self.heading])):
            raise DegenerateInputError("error record must be finite")


class ErrorSeries(list):
    """List of ErrorRecord that also remembers how many estimates were skipped."""

    skipped: int = 0


@dataclass(frozen=True)
class Estimate:
    """One localization: live robot time, matched vertex time, estimated T_rm."""

    time: float
    map_time: float
    T_rm: np.ndarray


@dataclass
class RunReport:
    rmse: tuple
    count: int
    skipped: int
    acceptance_rate: float
    histogram: dict = field(default_factory=dict)  # component -> (edges, counts)
    storage_mb_per_km: float = float("nan")
    odometry_fps: float = float("nan")
    localization_fps: float = float("nan")

    def __post_init__(self):
        if any(v < 0 for v in self.rmse):
            raise DegenerateInputError("rmse must be non-negative")


def pose_error(T_mr_est: np.ndarray, T_mr_gt: np.ndarray, T_rs_live=None, T_rs_map=None):
    """(lateral, longitudinal, heading) of ``T_ms_gt^-1 T_ms_est`` between sensor frames.

    With ``T_ms = T_rs_map^-1 T_mr T_rs_live``; without extrinsics the robot
    frames are compared directly.
    """
    A = np.eye(4) if T_rs_live is None else np.asarray(T_rs_live, dtype=float)
    B = np.eye(4) if T_rs_map is None else np.asarray(T_rs_map, dtype=float)
    est = lg.inverse(B) @ T_mr_est @ A
    gt = lg.inverse(B) @ T_mr_gt @ A
    return se2_project(lg.inverse(gt) @ est)


def _gt_lookup(gt):
    if callable(gt):
        return gt
    return lambda t: gt[t]


def compute_errors(estimates, gt, T_rs_live=None, T_rs_map=None) -> ErrorSeries:
    """Per-estimate SE(2) errors against ground truth world poses ``T_wr``.

    ``gt`` maps a timestamp to a world pose (dict or callable); timestamps are
    matched exactly. Estimates whose times are not covered are skipped. The
    extrinsics place the live and map sensor frames on the robot.
    """
    lookup = _gt_lookup(gt)
    out = ErrorSeries()
    for est in estimates:
        try:
            T_wr = lookup(est.time)
            T_wm = lookup(est.map_time)
        except KeyError:
            out.skipped += 1
            continue
        T_mr_gt = lg.inverse(T_wm) @ T_wr
        lat, lon, head = pose_error(lg.inverse(est.T_rm), T_mr_gt, T_rs_live, T_rs_map)
        out.append(ErrorRecord(float(est.time), lat, lon, head))
    if out.skipped:
        log.warning("%d estimates have no ground truth and were skipped", out.skipped)
    return out


def rmse(records) -> np.ndarray:
    if len(records) == 0:
        raise DegenerateInputError("rmse of an empty record set")
    e = np.array([[r.lateral, r.longitudinal, r.heading] for r in records])
    return np.sqrt(np.mean(e**2, axis=0))


def histogram(values, width: float):
    """Counts on a fixed grid of bin ``width`` anchored at zero."""
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return np.zeros(1), np.zeros(0, dtype=int)
    lo = np.floor(values.min() / width)
    hi = np.floor(values.max() / width) + 1
    edges = np.arange(lo, hi + 1) * width
    idx = np.clip(np.floor(values / width) - lo, 0, len(edges) - 2).astype(int)
    counts = np.bincount(idx, minlength=len(edges) - 1)
    return edges, counts


def read_ground_truth(path) -> dict:
    times, poses, _ = read_trajectory(path)
    return {float(t): T for t, T in zip(times, poses)}


def read_loclog(path):
    """Accepted estimates and the total frame count from a localization log."""
    _, rows = read_tsv(path)
    try:
        est = [
            Estimate(float(r["time"]), float(r["map_stamp"]), transform_from_list([float(r[c]) for c in POSE_COLUMNS]))
            for r in rows
            if int(r["accepted"])
        ]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed localization log {path}: {exc}") from exc
    return est, len(rows)


def read_timing(path) -> dict:
    _, rows = read_tsv(path)
    try:
        return {r["stage"]: (int(r["frames"]), float(r["seconds"])) for r in rows}
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed timing table {path}: {exc}") from exc


def _fps(timing: dict, stage: str) -> float:
    frames, seconds = timing.get(stage, (0, 0.0))
    return frames / seconds if seconds > 0 else float("nan")


def storage_mb_per_km(storage_bytes: int, path_length_m: float) -> float:
    if not path_length_m > 0:
        return float("nan")
    return (storage_bytes / 1e6) / (path_length_m / 1e3)


def map_storage_mb_per_km(run_dir) -> float:
    """MB per taught km of a teach run directory."""
    meta = read_meta(run_dir)
    return storage_mb_per_km(storage_bytes(run_dir), float(meta.get("path_length_m", 0.0)))


def _extrinsic(cfg: dict, sensor):
    try:
        return lg.from_rpy_xyz(*cfg[sensor]["extrinsic"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"run metadata lacks the {sensor} extrinsic") from exc


@dataclass
class OdometryReport:
    """Scan-to-scan pose errors, relative velocity errors and end-point drift of an odometry run."""

    translation_errors: np.ndarray  # m, one per consecutive scan pair
    rotation_errors: np.ndarray  # rad
    velocity_errors: np.ndarray  # |varpi_est + nu_gt| / |nu_gt| per scan
    drift: float  # end-point position error over path length
    path_length: float


def read_odometry(run_dir):
    """``(times, T_0r, varpi)`` of every scan in a run, relative to the run's first vertex."""
    run_dir = Path(run_dir)
    graph = load_graph(run_dir)
    _, rows = read_tsv(run_dir / "odometry.tsv")
    if not rows:
        raise DegenerateInputError(f"{run_dir} has an empty odometry table")
    times, poses, varpi, cache = [], [], [], {}
    try:
        for r in rows:
            vid = (int(r["vertex_run"]), int(r["vertex_index"]))
            if vid not in cache:
                cache[vid] = graph.relative((vid[0], 0), vid)[0]
            T_rk = transform_from_list([float(r[c]) for c in POSE_COLUMNS])
            times.append(float(r["time"]))
            poses.append(cache[vid] @ lg.inverse(T_rk))
            varpi.append([float(r[c]) for c in TWIST_COLUMNS])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed odometry table in {run_dir}: {exc}") from exc
    return np.array(times), np.array(poses), np.array(varpi)


def odometry_report(run_dir, gt_path) -> OdometryReport:
    times, poses, varpi = read_odometry(run_dir)
    gt_t, gt_T, gt_nu = read_trajectory(gt_path)
    if gt_nu is None:
        raise FormatError("ground truth lacks body twists")
    lookup = {float(t): i for i, t in enumerate(gt_t)}
    try:
        ig = np.array([lookup[float(t)] for t in times])
    except KeyError as exc:
        raise DegenerateInputError(f"no ground truth at odometry stamp {exc}") from exc
    G, nu = gt_T[ig], gt_nu[ig]
    trans, rot = [], []
    for i in range(len(times) - 1):
        e = lg.log_se3(lg.inverse(lg.inverse(G[i]) @ G[i + 1]) @ lg.inverse(poses[i]) @ poses[i + 1])
        trans.append(np.linalg.norm(e[:3]))
        rot.append(np.linalg.norm(e[3:]))
    speed = np.linalg.norm(nu, axis=1)
    vel = np.linalg.norm(varpi + nu, axis=1) / np.maximum(speed, 1e-12)
    length = float(np.sum(np.linalg.norm(np.diff(G[:, :3, 3], axis=0), axis=1)))
    end_gt = lg.inverse(G[0]) @ G[-1]
    end_est = lg.inverse(poses[0]) @ poses[-1]
    err = float(np.linalg.norm(end_est[:3, 3] - end_gt[:3, 3]))
    drift = err / length if length > 0 else float("nan")
    return OdometryReport(np.array(trans), np.array(rot), vel, drift, length)


def write_odometry_report(rep: OdometryReport, out_dir) -> None:
    """``odometry_errors.csv`` per scan and a one-row ``odometry_summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nan = float("nan")
    rows = [
        [i, float(rep.velocity_errors[i]),
         float(rep.translation_errors[i - 1]) if i else nan, float(rep.rotation_errors[i - 1]) if i else nan]
        for i in range(len(rep.velocity_errors))
    ]
    write_tsv(out_dir / "odometry_errors.csv", ["scan", "velocity_error", "translation_error", "rotation_error"], rows)
    write_tsv(
        out_dir / "odometry_summary.csv",
        ["scans", "path_length_m", "drift", "max_translation_error", "max_rotation_error", "max_velocity_error"],
        [[len(rep.velocity_errors), rep.path_length, rep.drift, float(rep.translation_errors.max(initial=0.0)),
          float(rep.rotation_errors.max(initial=0.0)), float(rep.velocity_errors.max())]],
    )


def report(run_dir, gt_path, out_dir) -> RunReport:
    """Write errors.csv, summary.csv, histogram.csv and timing.csv for a repeat run."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    for name in ("loclog.tsv", "timing.csv", "meta.json"):
        if not (run_dir / name).is_file():
            raise FormatError(f"run directory {run_dir} lacks {name}")
    meta = read_meta(run_dir)
    if meta.get("kind") != "repeat":
        raise FormatError(f"{run_dir} is not a repeat run")
    estimates, n_frames = read_loclog(run_dir / "loclog.tsv")
    if n_frames == 0:
        raise DegenerateInputError(f"repeat run {run_dir} has no frames")
    cfg = meta.get("config", {})
    records = compute_errors(
        estimates,
        read_ground_truth(gt_path),
        _extrinsic(cfg, meta.get("sensor")),
        _extrinsic(cfg, meta.get("map", {}).get("sensor")),
    )
    if not records:
        raise DegenerateInputError(f"repeat run {run_dir} has no evaluable localizations")
    err = rmse(records)
    timing = read_timing(run_dir / "timing.csv")
    m = meta.get("map", {})
    rep = RunReport(
        rmse=tuple(float(v) for v in err),
        count=len(records),
        skipped=records.skipped,
        acceptance_rate=len(estimates) / n_frames,
        storage_mb_per_km=storage_mb_per_km(int(m.get("storage_bytes", 0)), float(m.get("path_length_m", 0.0))),
        odometry_fps=_fps(timing, "odometry"),
        localization_fps=_fps(timing, "localization"),
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    write_tsv(
        out_dir / "errors.csv",
        ["time", "lateral", "longitudinal", "heading_deg"],
        [[r.time, r.lateral, r.longitudinal, float(np.degrees(r.heading))] for r in records],
    )
    hist_rows = []
    for comp, values, width in (
        ("lateral", [r.lateral for r in records], BIN_METERS),
        ("longitudinal", [r.longitudinal for r in records], BIN_METERS),
        ("heading_deg", [float(np.degrees(r.heading)) for r in records], BIN_DEGREES),
    ):
        edges, counts = histogram(values, width)
        rep.histogram[comp] = (edges, counts)
        hist_rows += [[comp, float(edges[i]), float(edges[i + 1]), int(c)] for i, c in enumerate(counts)]
    write_tsv(out_dir / "histogram.csv", ["component", "lower", "upper", "count"], hist_rows)
    # wall-clock figures stay in timing.csv so that every other output is reproducible
    write_tsv(
        out_dir / "summary.csv",
        ["run", "mode", "count", "skipped", "acceptance_rate", "lateral_rmse", "longitudinal_rmse",
         "heading_rmse_deg", "storage_mb_per_km"],
        [[run_dir.name, str(meta.get("mode")), rep.count, rep.skipped, rep.acceptance_rate, rep.rmse[0], rep.rmse[1],
          float(np.degrees(rep.rmse[2])), rep.storage_mb_per_km]],
    )
    shutil.copyfile(run_dir / "timing.csv", out_dir / "timing.csv")
    return rep
