"""Scenario files: world, trajectories and sensor settings for the simulator."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import liegroup as lg
from . import simulator as sim
from .errors import ConfigurationError
from .persistence import write_pointcloud, write_polar_scan, write_trajectory

DEFAULT_EXTRINSICS = {"lidar": [0.0, 0.0, 1.8, 0.0, 0.0, 0.0], "radar": [0.3, 0.0, 2.0, 0.0, 0.0, 0.0]}


@dataclass
class Sequence:
    name: str
    gt: sim.GroundTruth
    duration: float
    sensors: list
    seed: int
    lidar: sim.LidarSpec
    radar: sim.RadarSpec


@dataclass
class Scenario:
    world: sim.World
    sequences: list = field(default_factory=list)

    def sequence(self, name: str) -> Sequence:
        for s in self.sequences:
            if s.name == name:
                return s
        raise KeyError(name)


def _spec(cls, base: dict, override: dict):
    merged = {**(base or {}), **(override or {})}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(merged) - names
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if "elevations_deg" in merged:
        merged["elevations_deg"] = tuple(merged["elevations_deg"])
    return cls(**merged)


def _ground_truth(seq: dict, extrinsics: dict) -> sim.GroundTruth:
    segments = [sim.Segment(float(s["duration"]), np.asarray(s["twist"], dtype=float)) for s in seq["segments"]]
    pose = lg.from_rpy_xyz(*seq.get("initial_pose", [0, 0, 0, 0, 0, 0]))
    return sim.GroundTruth(float(seq.get("t_start", 0.0)), pose, segments, extrinsics)


def scenario_from_dict(data: dict) -> Scenario:
    try:
        ext = {k: lg.from_rpy_xyz(*v) for k, v in {**DEFAULT_EXTRINSICS, **data.get("extrinsics", {})}.items()}
        seqs = []
        for raw in data["sequences"]:
            gt = _ground_truth(raw, ext)
            duration = float(raw.get("duration", gt.t_end - gt.t_start))
            seqs.append(
                Sequence(
                    name=str(raw["name"]),
                    gt=gt,
                    duration=duration,
                    sensors=list(raw.get("sensors", ["lidar"])),
                    seed=int(raw.get("seed", 0)),
                    lidar=_spec(sim.LidarSpec, data.get("lidar"), raw.get("lidar")),
                    radar=_spec(sim.RadarSpec, data.get("radar"), raw.get("radar")),
                )
            )
        w = data.get("world", {}) or {}
        patches = [
            sim.wall(p["from"], p["to"], float(p["height"]), float(p.get("reflectivity", 1.0)))
            for p in w.get("walls", [])
        ]
        poles = [
            sim.Pole(np.asarray(p["position"], float), float(p["radius"]), float(p["height"]), float(p.get("reflectivity", 1.0)))
            for p in w.get("poles", [])
        ]
        if w.get("generate", True):
            route = next((s for s in seqs if s.name == w.get("route", seqs[0].name)), seqs[0])
            gen = sim.generate_world(route.gt, int(w.get("seed", 0)), float(w.get("spacing", 14.0)))
            patches = gen.patches + patches
            poles = gen.poles + poles
        elif w.get("ground", True):
            patches = [sim.ground()] + patches
        world = sim.World(patches, poles)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid scenario: {exc!r}") from exc
    names = [s.name for s in seqs]
    if len(set(names)) != len(names):
        raise ConfigurationError("sequence names must be unique")
    return Scenario(world, seqs)


def load_scenario(path) -> Scenario:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot load scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("scenario file must hold a mapping")
    return scenario_from_dict(data)


def stamp_name(stamp: float) -> str:
    return f"{stamp:.6f}"


def simulate_sequence(world: sim.World, seq: Sequence, out_dir):
    """Write one sequence's scans; returns the representative stamps used."""
    out_dir = Path(out_dir)
    stamps = []
    for sensor in seq.sensors:
        if sensor == "lidar":
            spec = seq.lidar
            n_samples = spec.n_columns
        elif sensor == "radar":
            spec = seq.radar
            n_samples = spec.n_azimuths
        else:
            raise ConfigurationError(f"unknown sensor {sensor!r}")
        d = out_dir / seq.name / sensor
        d.mkdir(parents=True, exist_ok=True)
        n_scans = int(np.floor(seq.duration * spec.rate_hz + 1e-9))
        for t0 in sim.scan_times(seq.gt.t_start, spec.period, n_scans):
            stamp = sim.representative_stamp(float(t0), spec.period, n_samples)
            if sensor == "lidar":
                write_pointcloud(d / (stamp_name(stamp) + ".tlpc"), sim.simulate_lidar(world, seq.gt, float(t0), spec, seq.seed))
            else:
                write_polar_scan(d / (stamp_name(stamp) + ".tlps"), sim.simulate_radar(world, seq.gt, float(t0), spec, seq.seed))
            stamps.append(float(stamp_name(stamp)))
    return sorted(set(stamps))


def simulate_scenario(scenario: Scenario, out_dir) -> Path:
    """Simulate every sequence and write the combined ground-truth table ``gt.tsv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times, poses, twists = [], [], []
    for seq in scenario.sequences:
        stamps = simulate_sequence(scenario.world, seq, out_dir)
        times.extend(stamps)
        poses.extend(seq.gt.pose(np.asarray(stamps)))
        twists.extend(seq.gt.body_twist(np.asarray(stamps)))
    if len(set(times)) != len(times):
        raise ConfigurationError("sequences overlap in time; give each a distinct t_start")
    order = np.argsort(times, kind="stable")
    gt_path = out_dir / "gt.tsv"
    write_trajectory(gt_path, [times[i] for i in order], [poses[i] for i in order], [twists[i] for i in order])
    return gt_path
