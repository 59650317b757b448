"""Deterministic 2.5-D world, ground-truth trajectories and lidar/radar sensor models.

The world holds planar rectangular patches (ground, building faces) and
vertical poles. Ground truth is a chain of constant body-twist segments, so
``T_wr(t) = T_wr(t_s) exp((t - t_s) nu^)`` inside segment ``s``. Note that the
estimator's velocity is ``-nu`` (it describes how the vertex frame moves as
seen from the robot).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .errors import ConfigurationError
from .pointcloud import PointCloud
from .radar import PolarScan


@dataclass(frozen=True)
class Patch:
    center: np.ndarray
    normal: np.ndarray
    axis_u: np.ndarray
    half_u: float
    half_v: float
    reflectivity: float = 1.0

    @property
    def axis_v(self) -> np.ndarray:
        return np.cross(self.normal, self.axis_u)


@dataclass(frozen=True)
class Pole:
    position: np.ndarray  # (x, y) of the axis
    radius: float
    height: float
    reflectivity: float = 1.0


@dataclass
class World:
    patches: list = field(default_factory=list)
    poles: list = field(default_factory=list)
    bounds: float = 1000.0

    def __post_init__(self):
        for p in self.patches:
            if not (p.half_u > 0 and p.half_v > 0 and 0 < p.reflectivity <= 1):
                raise ConfigurationError("patches need positive extent and reflectivity in (0, 1]")
        for p in self.poles:
            if not (p.radius > 0 and p.height > 0 and 0 < p.reflectivity <= 1):
                raise ConfigurationError("poles need positive extent and reflectivity in (0, 1]")


def wall(p0, p1, height: float, reflectivity: float = 1.0) -> Patch:
    """Vertical rectangle standing on the ground between (x, y) points p0 and p1."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    length = np.linalg.norm(d)
    u = np.array([d[0], d[1], 0.0]) / length
    n = np.array([-u[1], u[0], 0.0])
    c = np.array([(p0[0] + p1[0]) / 2, (p0[1] + p1[1]) / 2, height / 2])
    # axis_v = n x u points down or up; half extents are symmetric so either works
    return Patch(c, n, u, length / 2, height / 2, reflectivity)


def ground(half_size: float = 1000.0, z: float = 0.0) -> Patch:
    return Patch(np.array([0.0, 0.0, z]), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), half_size, half_size)


def box(center_xy, size_xy, yaw: float, height: float, reflectivity: float = 1.0) -> list:
    """Four vertical faces of a building footprint."""
    c, s = np.cos(yaw), np.sin(yaw)
    hx, hy = size_xy[0] / 2, size_xy[1] / 2
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    corners = local @ np.array([[c, s], [-s, c]]) + np.asarray(center_xy, float)
    return [wall(corners[i], corners[(i + 1) % 4], height, reflectivity) for i in range(4)]


@dataclass(frozen=True)
class Segment:
    duration: float
    twist: np.ndarray  # body twist nu = (v, w)


@dataclass
class GroundTruth:
    """Piecewise-constant body-twist trajectory starting at ``t_start``."""

    t_start: float
    initial_pose: np.ndarray
    segments: list
    extrinsics: dict = field(default_factory=dict)  # sensor name -> T_rs

    def __post_init__(self):
        self.initial_pose = np.asarray(self.initial_pose, dtype=float)
        self.segments = [Segment(float(s.duration), np.asarray(s.twist, dtype=float)) for s in self.segments]
        if any(s.duration <= 0 for s in self.segments):
            raise ConfigurationError("segment durations must be positive")
        starts = [self.initial_pose]
        for s in self.segments[:-1]:
            starts.append(starts[-1] @ lg.exp_se3(s.duration * s.twist))
        self._starts = np.array(starts)
        self._t0 = self.t_start + np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])[:-1]])

    @property
    def t_end(self) -> float:
        return self.t_start + sum(s.duration for s in self.segments)

    def _segment_index(self, t: np.ndarray) -> np.ndarray:
        # the last segment extends indefinitely
        return np.clip(np.searchsorted(self._t0, t, side="right") - 1, 0, len(self.segments) - 1)

    def pose(self, t):
        """``T_wr(t)`` for a scalar or an array of times."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        seg = self._segment_index(t)
        twists = np.array([s.twist for s in self.segments])[seg]
        dt = t - self._t0[seg]
        out = self._starts[seg] @ lg.exp_se3(dt[:, None] * twists)
        return out[0] if scalar else out

    def body_twist(self, t):
        t = np.asarray(t, dtype=float)
        twists = np.array([s.twist for s in self.segments])
        out = twists[self._segment_index(np.atleast_1d(t))]
        return out[0] if t.ndim == 0 else out

    def varpi(self, t):
        """Velocity in the estimator's convention, ``dT_rk/dt = varpi^ T_rk``."""
        return -self.body_twist(t)

    def sensor_pose(self, name: str, t):
        return self.pose(t) @ self.extrinsics[name]


@dataclass(frozen=True)
class LidarSpec:
    horizontal_resolution_deg: float = 0.2
    rate_hz: float = 10.0
    max_range: float = 300.0
    min_range: float = 1.0
    range_noise: float = 0.0
    clutter_rate: float = 0.0
    clutter_radius: float = 30.0
    blockage_center_deg: float = 180.0
    blockage_width_deg: float = 0.0
    elevations_deg: tuple = ()

    def __post_init__(self):
        if not (self.horizontal_resolution_deg > 0 and self.rate_hz > 0 and self.max_range > 0):
            raise ConfigurationError("lidar resolutions and rate must be positive")
        if self.range_noise < 0 or not 0 <= self.clutter_rate <= 1:
            raise ConfigurationError("lidar noise must be >= 0 and clutter rate in [0, 1]")

    @property
    def elevations(self) -> np.ndarray:
        if self.elevations_deg:
            return np.deg2rad(np.asarray(self.elevations_deg, dtype=float))
        return np.deg2rad(default_elevations())

    @property
    def n_columns(self) -> int:
        return int(round(360.0 / self.horizontal_resolution_deg))

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz


def default_elevations() -> np.ndarray:
    """60 beams: 0.6 deg steps over the ground and 0.48 deg steps around the horizon.

    Nearby ground rings are close enough that a 40-neighbour patch spans
    several of them, so ground normals are well defined.
    """
    return np.concatenate([np.arange(-24.0, -6.0, 0.6), np.linspace(-6.0, 8.0, 30)])


@dataclass(frozen=True)
class RadarSpec:
    azimuth_resolution_deg: float = 0.9
    rate_hz: float = 4.0
    range_resolution: float = 0.0596
    n_bins: int = 3360
    max_range: float = 200.0
    min_range: float = 2.0
    power_noise: float = 2.0
    peak_power: float = 60.0
    blob_sigma_bins: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not (self.azimuth_resolution_deg > 0 and self.range_resolution > 0 and self.rate_hz > 0):
            raise ConfigurationError("radar resolutions and rate must be positive")
        if self.power_noise < 0:
            raise ConfigurationError("radar power noise must be >= 0")

    @property
    def n_azimuths(self) -> int:
        return int(round(360.0 / self.azimuth_resolution_deg))

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


def cast_rays(world: World, origins: np.ndarray, dirs: np.ndarray, max_range: float):
    """First-hit range along each ray (inf on miss).

    ``origins``: (..., 3) broadcastable against ``dirs``: (..., 3) unit vectors.
    Returns (range, reflectivity).
    """
    shape = np.broadcast_shapes(origins.shape, dirs.shape)[:-1]
    best = np.full(shape, np.inf)
    refl = np.zeros(shape)
    o_c = origins.reshape(-1, 3).mean(axis=0)
    for p in world.patches:
        if np.linalg.norm(p.center - o_c) - np.hypot(p.half_u, p.half_v) > max_range + 10:
            continue
        denom = dirs @ p.normal
        num = (p.center - origins) @ p.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        ok = np.isfinite(t) & (t > 1e-9) & (t < best)
        if not ok.any():
            continue
        hit = origins + np.where(ok, t, 0.0)[..., None] * dirs - p.center
        ok &= (np.abs(hit @ p.axis_u) <= p.half_u) & (np.abs(hit @ p.axis_v) <= p.half_v)
        best = np.where(ok, t, best)
        refl = np.where(ok, p.reflectivity, refl)
    for pole in world.poles:
        if np.linalg.norm(pole.position - o_c[:2]) > max_range + 10:
            continue
        o = origins[..., :2] - pole.position
        d = dirs[..., :2]
        a = np.sum(d * d, axis=-1)
        b = np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - pole.radius**2
        disc = b * b - a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (-b - np.sqrt(disc)) / a
        z = origins[..., 2] + t * dirs[..., 2]
        ok = (disc > 0) & (a > 0) & (t > 1e-9) & (t < best) & (z >= 0) & (z <= pole.height)
        best = np.where(ok, t, best)
        refl = np.where(ok, pole.reflectivity, refl)
    best = np.where(best <= max_range, best, np.inf)
    return best, refl


def simulate_lidar(world: World, gt: GroundTruth, t0: float, spec: LidarSpec, seed: int, sensor: str = "lidar") -> PointCloud:
    """One revolution starting at ``t0``; every column is cast from its own sensor pose."""
    rng = _rng(seed, int(round(t0 * 1e6)))
    n_col = spec.n_columns
    az = 2 * np.pi * np.arange(n_col) / n_col
    times = t0 + spec.period * np.arange(n_col) / n_col
    elev = spec.elevations
    T_ws = gt.sensor_pose(sensor, times)  # (C, 4, 4)
    d_s = np.stack(
        [
            np.cos(elev)[None, :] * np.cos(az)[:, None],
            np.cos(elev)[None, :] * np.sin(az)[:, None],
            np.broadcast_to(np.sin(elev)[None, :], (n_col, len(elev))),
        ],
        axis=-1,
    )  # (C, B, 3) sensor frame
    d_w = np.einsum("cij,cbj->cbi", T_ws[:, :3, :3], d_s)
    o_w = T_ws[:, None, :3, 3]
    rng_true, _ = cast_rays(world, o_w, d_w, spec.max_range)
    hit = np.isfinite(rng_true) & (rng_true >= spec.min_range)
    if spec.blockage_width_deg > 0:
        diff = np.angle(np.exp(1j * (az - np.deg2rad(spec.blockage_center_deg))))
        blocked = np.abs(diff) <= np.deg2rad(spec.blockage_width_deg) / 2
        hit &= ~blocked[:, None]
    col, beam = np.nonzero(hit)
    r = rng_true[col, beam]
    if spec.range_noise > 0:
        r = r + rng.normal(0.0, spec.range_noise, size=r.shape)
    pts = r[:, None] * d_s[col, beam]
    t_pts = times[col]
    if spec.clutter_rate > 0:
        n_clutter = rng.binomial(len(pts), spec.clutter_rate)
        dirs = rng.normal(size=(n_clutter, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radius = spec.clutter_radius * rng.uniform(size=n_clutter) ** (1 / 3)
        c_col = rng.integers(0, n_col, size=n_clutter)
        pts = np.concatenate([pts, radius[:, None] * dirs])
        t_pts = np.concatenate([t_pts, times[c_col]])
        order = np.argsort(t_pts, kind="stable")
        pts, t_pts = pts[order], t_pts[order]
    return PointCloud(pts, t_pts, frame_id=sensor)


def simulate_radar(world: World, gt: GroundTruth, t0: float, spec: RadarSpec, seed: int, sensor: str = "radar") -> PolarScan:
    """One sweep of the spinning radar with motion and Doppler distortion.

    Returns fall at ``r_true + beta * closing_speed``: a reflector the sensor
    approaches appears farther away.
    """
    rng = _rng(seed, int(round(t0 * 1e6)))
    n_az = spec.n_azimuths
    angles = 2 * np.pi * np.arange(n_az) / n_az
    times = t0 + spec.period * np.arange(n_az) / n_az
    T_ws = gt.sensor_pose(sensor, times)
    a_s = np.stack([np.cos(angles), np.sin(angles), np.zeros(n_az)], axis=1)
    d_w = np.einsum("aij,aj->ai", T_ws[:, :3, :3], a_s)
    o_w = T_ws[:, :3, 3]
    walls = World(world.patches, [], world.bounds)
    rng_true, refl = cast_rays(walls, o_w, d_w, spec.max_range)

    # poles return only in the azimuth closest to their bearing
    half = np.deg2rad(spec.azimuth_resolution_deg) / 2
    T_sw = lg.inverse(T_ws)
    for pole in world.poles:
        p_s = lg.transform_points(T_sw, np.broadcast_to(np.r_[pole.position, o_w[0, 2]], (n_az, 3)))
        bearing = np.arctan2(p_s[:, 1], p_s[:, 0])
        off = np.abs(np.angle(np.exp(1j * (angles - bearing))))
        rows = np.flatnonzero(off <= half)
        for k in rows:
            d = np.hypot(p_s[k, 0], p_s[k, 1]) - pole.radius
            if 0 < d < rng_true[k] and d <= spec.max_range:
                rng_true[k] = d
                refl[k] = pole.reflectivity

    # Doppler shift from the sensor-frame velocity of the (static) reflector
    varpi_s = gt.varpi(times) @ lg.adjoint(lg.inverse(gt.extrinsics[sensor])).T
    q = np.where(np.isfinite(rng_true), rng_true, 0.0)[:, None] * a_s
    u = varpi_s[:, :3] + np.cross(varpi_s[:, 3:], q)
    r_meas = rng_true - spec.beta * np.einsum("ai,ai->a", a_s, u)

    bins = np.arange(spec.n_bins)
    power = np.zeros((n_az, spec.n_bins))
    valid = np.isfinite(r_meas) & (rng_true >= spec.min_range)
    centers = r_meas / spec.range_resolution - 0.5
    for k in np.flatnonzero(valid):
        lo = max(int(centers[k] - 6 * spec.blob_sigma_bins), 0)
        hi = min(int(centers[k] + 6 * spec.blob_sigma_bins) + 2, spec.n_bins)
        x = bins[lo:hi] - centers[k]
        power[k, lo:hi] += spec.peak_power * refl[k] * np.exp(-0.5 * (x / spec.blob_sigma_bins) ** 2)
    if spec.power_noise > 0:
        power += rng.exponential(spec.power_noise, size=power.shape)
    return PolarScan(angles, times, power.astype(np.float32), spec.range_resolution)


def generate_world(
    route: GroundTruth,
    seed: int,
    spacing: float = 14.0,
    clearance: float = 7.0,
    depth: float = 8.0,
    pole_probability: float = 0.5,
    margin: float = 40.0,
) -> World:
    """Buildings and poles scattered along both sides of a route."""
    rng = _rng(seed, 0)
    t = np.linspace(route.t_start - margin / 10, route.t_end + margin / 10, 2000)
    poses = route.pose(t)
    xy = poses[:, :2, 3]
    heading = np.arctan2(poses[:, 1, 0], poses[:, 0, 0])
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    patches = [ground()]
    poles = []
    footprints = []
    s = 0.0
    while s <= arc[-1]:
        i = int(np.searchsorted(arc, s))
        i = min(i, len(xy) - 1)
        fwd = np.array([np.cos(heading[i]), np.sin(heading[i])])
        left = np.array([-fwd[1], fwd[0]])
        for side in (1.0, -1.0):
            length = rng.uniform(6.0, 11.0)
            width = rng.uniform(4.0, depth)
            lat = clearance + rng.uniform(0.0, 4.0) + width / 2
            center = xy[i] + side * lat * left + rng.uniform(-2.0, 2.0) * fwd
            yaw = heading[i] + rng.uniform(-0.3, 0.3)
            height = rng.uniform(6.0, 15.0)
            radius = np.hypot(length, width) / 2
            d_route = np.min(np.linalg.norm(xy - center, axis=1))
            if d_route - radius < clearance - 1.0:
                continue
            if any(np.linalg.norm(center - c) < radius + r for c, r in footprints):
                continue
            footprints.append((center, radius))
            patches.extend(box(center, (length, width), yaw, height, rng.uniform(0.5, 1.0)))
            if rng.uniform() < pole_probability:
                p = xy[i] + side * rng.uniform(3.5, clearance - 1.5) * left + rng.uniform(-4, 4) * fwd
                if np.min(np.linalg.norm(xy - p, axis=1)) > 3.0:
                    poles.append(Pole(p, rng.uniform(0.1, 0.2), rng.uniform(4.0, 8.0), 1.0))
        s += spacing
    return World(patches, poles)


def scan_times(t_start: float, period: float, n_scans: int) -> np.ndarray:
    """Start time of each scan in a sequence."""
    return t_start + period * np.arange(n_scans)


def representative_stamp(start: float, period: float, n_samples: int) -> float:
    """Midpoint of the first and last sample time, rounded to the microsecond."""
    return round(start + 0.5 * period * (n_samples - 1) / n_samples, 6)
