"""Teach and repeat orchestration: preprocessing, odometry and mapping, localization."""

from __future__ import annotations

import hashlib
import logging
import time as _time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import gp
from . import liegroup as lg
from .config import PipelineConfig
from .ct_icp import DopplerConfig, OdometryResult, ct_icp, undistort
from .errors import ConfigurationError, DegenerateInputError, FormatError, PipelineAbort
from .evaluation import pose_error
from .localization import localize
from .persistence import (
    POSE_COLUMNS,
    TWIST_COLUMNS,
    load_run,
    read_polar_scan,
    read_pointcloud,
    save_run,
    storage_bytes,
    transform_to_list,
    write_tsv,
)
from .pointcloud import NnIndex, PointCloud, preprocess_lidar
from .posegraph import (
    TEMPORAL,
    Edge,
    PoseGraph,
    Vertex,
    accumulate_submap,
    add_localization_edge,
    closest_map_vertex,
    localization_prior,
    should_spawn,
)
from .radar import extract_targets

log = logging.getLogger(__name__)

SUFFIX = {"lidar": ".tlpc", "radar": ".tlps"}
TEACH_RUN = 0
REPEAT_RUN = 1


@dataclass
class ScanFrame:
    stamp: float
    cloud: PointCloud  # preprocessed, sensor frame


def list_scans(directory, sensor: str):
    """``(stamp, path)`` pairs sorted by the timestamp encoded in the file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"scan directory {directory} does not exist")
    out = []
    for path in directory.glob("*" + SUFFIX[sensor]):
        try:
            out.append((float(path.stem), path))
        except ValueError as exc:
            raise FormatError(f"scan file name {path.name} is not a timestamp") from exc
    if not out:
        raise DegenerateInputError(f"no {sensor} scans in {directory}")
    return sorted(out)


@dataclass
class SensorSetup:
    name: str
    T_rs: np.ndarray
    model: object
    doppler: DopplerConfig
    voxel: Optional[float]

    @staticmethod
    def from_config(cfg: PipelineConfig, sensor: str) -> "SensorSetup":
        if sensor == "lidar":
            return SensorSetup("lidar", cfg.lidar.T_rs, cfg.lidar.model, DopplerConfig(), cfg.lidar.voxel_size)
        return SensorSetup("radar", cfg.radar.T_rs, cfg.radar.model, cfg.radar.doppler_config, None)


def preprocess(path, sensor: str, cfg: PipelineConfig) -> PointCloud:
    if sensor == "lidar":
        c = cfg.lidar
        raw = read_pointcloud(path, frame_id="lidar")
        radius = np.inf if c.normal_radius is None else c.normal_radius
        return preprocess_lidar(raw, c.voxel_size, c.knn, c.min_score, c.max_points, radius, c.min_planarity)
    scan = read_polar_scan(path)
    scan = type(scan)(scan.angles, scan.timestamps, scan.power, scan.range_resolution, cfg.radar.min_range_bin)
    return extract_targets(scan, cfg.radar.detector)


def load_stream(directory, sensor: str, cfg: PipelineConfig):
    for stamp, path in list_scans(directory, sensor):
        yield ScanFrame(stamp, preprocess(path, sensor, cfg))


@dataclass
class OdometryStep:
    stamp: float
    vertex: tuple
    knot: gp.TrajectoryKnot
    result: Optional[OdometryResult]
    live: PointCloud  # motion-compensated, robot frame at ``stamp``
    pose_cov: np.ndarray


class OdometryMapper:
    """CT-ICP odometry against the latest vertex submap, spawning vertices as it goes."""

    def __init__(self, cfg: PipelineConfig, sensor: SensorSetup, graph: PoseGraph, run: int):
        self.cfg = cfg
        self.sensor = sensor
        self.graph = graph
        self.run = run
        self.vertex = None
        self.knot = None
        self.index = None
        self.recent = []  # (robot-frame cloud, T_rk) of the latest scans
        self.first = None
        self.root_velocity = None
        self.root_live = None
        self.nonconverged = 0
        self.path_length = 0.0

    @property
    def distance(self) -> float:
        """Driven distance: chords between vertices plus the stretch since the latest one."""
        tail = 0.0 if self.knot is None else float(np.linalg.norm(lg.inverse(self.knot.pose)[:3, 3]))
        return self.path_length + tail

    def _compensate(self, frame: ScanFrame, prev: gp.TrajectoryKnot, cur: gp.TrajectoryKnot) -> PointCloud:
        return undistort(frame.cloud, prev, cur, self.sensor.T_rs, self.sensor.doppler)

    def _register(self, frame, prev, init=None):
        o = self.cfg.odometry
        return ct_icp(
            frame.cloud, self.index, prev, self.sensor.model, o.prior,
            doppler=self.sensor.doppler, extrinsic_rs=self.sensor.T_rs,
            initial=init, time=frame.stamp, options=o.icp_options,
        )

    def _bootstrap(self, frame: ScanFrame):
        """Recover the unknown root velocity from the second scan.

        Each round registers the second scan with a progressively tighter
        truncation and a loosened motion prior, then sets the constant velocity implied by the recovered
        displacement and re-undistorts the root scan with it. The velocity
        within a single sweep is too weakly observed to be used directly.
        """
        o = self.cfg.odometry
        base = self.sensor.model
        dt = frame.stamp - self.first.stamp
        init = None
        for scale in o.bootstrap_truncation_scales:
            model = replace(base, truncation_dist=base.truncation_dist * scale)
            result = ct_icp(
                frame.cloud, self.index, self.knot, model, o.bootstrap_prior,
                doppler=self.sensor.doppler, extrinsic_rs=self.sensor.T_rs,
                initial=init, time=frame.stamp, options=o.icp_options,
            )
            velocity = lg.log_se3(result.pose) / dt
            self._set_root(self.first, velocity)
            init = gp.TrajectoryKnot(frame.stamp, result.pose, velocity)
        return init

    def _set_root(self, frame: ScanFrame, velocity: np.ndarray):
        knot = gp.TrajectoryKnot(frame.stamp, np.eye(4), velocity)
        live = self._compensate(frame, knot, knot)
        submap = accumulate_submap([(live, np.eye(4))], np.eye(4), self.sensor.voxel, self.cfg.mapping.submap_scans)
        vid = (self.run, 0)
        self.graph.vertices[vid] = Vertex(vid, submap, frame.stamp)
        self.vertex = vid
        self.index = NnIndex(submap)
        self.knot = knot
        self.root_velocity = knot.velocity
        self.root_live = live
        self.recent = [(live, np.eye(4))]
        return live

    def process(self, frame: ScanFrame) -> OdometryStep:
        if len(frame.cloud) == 0:
            raise DegenerateInputError(f"scan at {frame.stamp} has no usable points")
        if self.vertex is None:
            self.first = frame
            live = self._set_root(frame, np.zeros(6))
            return OdometryStep(frame.stamp, self.vertex, self.knot, None, live, np.zeros((6, 6)))

        if self.knot.time == self.first.stamp and self.vertex == (self.run, 0) and len(self.recent) == 1:
            # second scan: alternate between registering it and re-undistorting the root
            # scan with the recovered velocity, since the root velocity is unknown
            init = self._bootstrap(frame)
        else:
            init = None
        result = self._register(frame, self.knot, init)
        if result.converged:
            self.nonconverged = 0
        else:
            self.nonconverged += 1
            if self.nonconverged > self.cfg.odometry.max_nonconverged:
                raise PipelineAbort(
                    f"odometry diverged: {self.nonconverged} consecutive non-converged scans (last at t={frame.stamp})"
                )
        prev = self.knot
        cur = result.knot
        live = self._compensate(frame, prev, cur)
        pose_cov = self.cfg.odometry.edge_cov_inflation * result.pose_covariance
        step_vertex = self.vertex

        self.recent.append((live, cur.pose))
        self.recent = self.recent[-self.cfg.mapping.submap_scans:]
        if should_spawn(cur.pose, self.cfg.mapping.thresholds):
            self._spawn(frame.stamp, cur, pose_cov)
            step_vertex = self.vertex
            step_knot = self.knot
            step_cov = np.zeros((6, 6))
        else:
            self.knot = cur
            step_knot = cur
            step_cov = pose_cov
        return OdometryStep(frame.stamp, step_vertex, step_knot, result, live, step_cov)

    def _spawn(self, stamp: float, cur: gp.TrajectoryKnot, pose_cov: np.ndarray):
        T_new_old = cur.pose
        submap = accumulate_submap(self.recent, T_new_old, self.sensor.voxel, self.cfg.mapping.submap_scans)
        vid = (self.run, self.vertex[1] + 1)
        self.graph.vertices[vid] = Vertex(vid, submap, stamp)
        self.graph.add_edge(Edge(self.vertex, vid, T_new_old, 0.5 * (pose_cov + pose_cov.T), TEMPORAL))
        self.path_length += float(np.linalg.norm(T_new_old[:3, 3]))
        T_old_new = lg.inverse(T_new_old)
        self.recent = [(c, T @ T_old_new) for c, T in self.recent]
        self.vertex = vid
        self.index = NnIndex(submap)
        self.knot = gp.TrajectoryKnot(cur.time, np.eye(4), cur.velocity)


def _fix_root_row(rows: list, mapper: OdometryMapper):
    # the root velocity is only known once the second scan has been registered
    if rows:
        rows[0][15:21] = [float(v) for v in mapper.root_velocity]


def _odometry_row(step: OdometryStep) -> list:
    r = step.result
    return (
        [step.stamp, step.vertex[0], step.vertex[1]]
        + transform_to_list(step.knot.pose)
        + [float(v) for v in step.knot.velocity]
        + [int(r.converged) if r else 1, r.iterations if r else 0, float(r.inlier_fraction) if r else 1.0]
    )


ODOMETRY_HEADER = ["time", "vertex_run", "vertex_index"] + POSE_COLUMNS + TWIST_COLUMNS + ["converged", "iterations", "inlier_fraction"]
LOCLOG_HEADER = (
    ["time", "accepted", "vertex_run", "vertex_index", "map_run", "map_index", "map_stamp", "inlier_fraction"]
    + POSE_COLUMNS
    + ["lateral", "longitudinal", "heading"]
)


def _timing_rows(timers: dict) -> list:
    rows = []
    for stage, (frames, seconds) in timers.items():
        rows.append([stage, frames, float(seconds), float(frames / seconds) if seconds > 0 else float("nan")])
    return rows


def _config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(repr(cfg.to_dict()).encode()).hexdigest()


def run_teach(cfg: PipelineConfig, scans_dir, out_dir) -> PoseGraph:
    """Build and persist the teach-pass pose graph."""
    sensor = SensorSetup.from_config(cfg, cfg.teach_sensor)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = PoseGraph()
    mapper = OdometryMapper(cfg, sensor, graph, TEACH_RUN)
    rows = []
    t_pre = t_odo = 0.0
    n = 0
    for stamp, path in list_scans(scans_dir, sensor.name):
        t0 = _time.perf_counter()
        frame = ScanFrame(stamp, preprocess(path, sensor.name, cfg))
        t1 = _time.perf_counter()
        step = mapper.process(frame)
        t_odo += _time.perf_counter() - t1
        t_pre += t1 - t0
        rows.append(_odometry_row(step))
        n += 1
    _fix_root_row(rows, mapper)
    write_tsv(out / "odometry.tsv", ODOMETRY_HEADER, rows)
    write_tsv(out / "timing.csv", ["stage", "frames", "seconds", "fps"], _timing_rows({"preprocessing": (n, t_pre), "odometry": (n, t_odo)}))
    meta = {
        "kind": "teach",
        "mode": cfg.mode,
        "sensor": sensor.name,
        "config": cfg.to_dict(),
        "config_sha256": _config_hash(cfg),
        "frames": n,
        "path_length_m": mapper.distance,
    }
    save_run(out, graph, meta, extra_files=["odometry.tsv"])
    log.info("teach finished: %d frames, %d vertices", n, len(graph.vertices))
    return graph


class Localizer:
    """Chains odometry and past localizations into a prior and localizes each frame."""

    def __init__(self, cfg: PipelineConfig, graph: PoseGraph, model):
        self.cfg = cfg
        self.graph = graph
        self.model = model
        self.indices = {}
        self.failures = 0

    def _index(self, m):
        if m not in self.indices:
            self.indices[m] = NnIndex(self.graph.vertices[m].submap)
        return self.indices[m]

    def step(self, k, T_rk, cov_rk, live: PointCloud):
        lc = self.cfg.localization
        edge = self.graph.latest_spatial_edge(REPEAT_RUN)
        if edge is None:
            k_prime, m_prime = (REPEAT_RUN, 0), (TEACH_RUN, 0)
            spatial = Edge(m_prime, k_prime, np.eye(4), lc.initial_covariance, "spatial")
        else:
            k_prime, m_prime, spatial = edge.to_id, edge.from_id, edge
        T_rmp, _ = localization_prior(self.graph, k, k_prime, m_prime, m_prime, T_rk, cov_rk, spatial)
        m = closest_map_vertex(self.graph, m_prime, T_rmp, lc.window)
        prior, prior_cov = localization_prior(self.graph, k, k_prime, m_prime, m, T_rk, cov_rk, spatial)
        # keep the prior invertible when every chained covariance is numerically zero
        prior_cov = prior_cov + 1e-12 * np.eye(6)
        result = localize(live, self._index(m), prior, prior_cov, self.model, lc.options)
        if result.accepted:
            add_localization_edge(self.graph, k, m, T_rk, result.pose, cov_rk, result.covariance)
            self.failures = 0
        else:
            self.failures += 1
            if self.failures > lc.max_failures:
                raise PipelineAbort(f"localization chain broken: {self.failures} consecutive rejected frames")
        return m, result


def run_repeat(cfg: PipelineConfig, map_dir, scans_dir, out_dir, gt=None) -> PoseGraph:
    """Odometry plus localization against a persisted teach map.

    ``gt`` optionally maps a timestamp to a world pose ``T_wr`` so that the
    localization log carries SE(2) errors; otherwise those columns are NaN.
    """
    teach = load_run(map_dir)
    expected = "lidar" if cfg.mode in ("lidar-lidar", "radar-lidar") else "radar"
    if teach.meta.get("kind") != "teach" or teach.meta.get("sensor") != expected:
        raise ConfigurationError(
            f"mode {cfg.mode} needs a {expected} teach map, got {teach.meta.get('kind')}/{teach.meta.get('sensor')}"
        )
    graph = teach.graph
    sensor = SensorSetup.from_config(cfg, cfg.repeat_sensor)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mapper = OdometryMapper(cfg, sensor, graph, REPEAT_RUN)
    localizer = Localizer(cfg, graph, cfg.lidar.model if sensor.name == "lidar" else cfg.radar.model)
    map_T_rs = cfg.lidar.T_rs if expected == "lidar" else cfg.radar.T_rs
    odo_rows, loc_rows = [], []
    t_pre = t_odo = t_loc = 0.0
    n = 0

    def locate(step: OdometryStep, live: PointCloud):
        m, res = localizer.step(step.vertex, step.knot.pose, step.pose_cov, live)
        errs = [float("nan")] * 3
        if gt is not None:
            T_mr_gt = lg.inverse(gt(graph.vertices[m].stamp)) @ gt(step.stamp)
            errs = list(pose_error(lg.inverse(res.pose), T_mr_gt, sensor.T_rs, map_T_rs))
        loc_rows.append(
            [step.stamp, int(res.accepted), step.vertex[0], step.vertex[1], m[0], m[1], graph.vertices[m].stamp,
             res.inlier_fraction]
            + transform_to_list(res.pose)
            + errs
        )

    root = None
    for stamp, path in list_scans(scans_dir, sensor.name):
        t0 = _time.perf_counter()
        frame = ScanFrame(stamp, preprocess(path, sensor.name, cfg))
        t1 = _time.perf_counter()
        step = mapper.process(frame)
        t2 = _time.perf_counter()
        if step.result is None:
            # the root scan is localized once the second scan has fixed its velocity
            root = step
        else:
            if root is not None:
                locate(root, mapper.root_live)
                root = None
            locate(step, step.live)
        t3 = _time.perf_counter()
        t_pre += t1 - t0
        t_odo += t2 - t1
        t_loc += t3 - t2
        n += 1
        odo_rows.append(_odometry_row(step))
    if root is not None:
        t2 = _time.perf_counter()
        locate(root, root.live)
        t_loc += _time.perf_counter() - t2
    _fix_root_row(odo_rows, mapper)
    write_tsv(out / "odometry.tsv", ODOMETRY_HEADER, odo_rows)
    write_tsv(out / "loclog.tsv", LOCLOG_HEADER, loc_rows)
    write_tsv(
        out / "timing.csv",
        ["stage", "frames", "seconds", "fps"],
        _timing_rows({"preprocessing": (n, t_pre), "odometry": (n, t_odo), "localization": (n, t_loc)}),
    )
    repeat_ids = graph.run_vertices(REPEAT_RUN)
    repeat_edges = [e for e in graph.edges if e.to_id[0] == REPEAT_RUN]
    meta = {
        "kind": "repeat",
        "mode": cfg.mode,
        "sensor": sensor.name,
        "config": cfg.to_dict(),
        "config_sha256": _config_hash(cfg),
        "frames": n,
        "path_length_m": mapper.distance,
        "map": {
            "graph_sha256": teach.meta["checksums"]["graph.json"],
            "storage_bytes": storage_bytes(map_dir),
            "path_length_m": teach.meta.get("path_length_m", 0.0),
            "sensor": teach.meta.get("sensor"),
        },
    }
    save_run(out, graph, meta, extra_files=["odometry.tsv", "loclog.tsv"], vertex_ids=repeat_ids, edges=repeat_edges)
    log.info("repeat finished: %d frames", n)
    return graph
