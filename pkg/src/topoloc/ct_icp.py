"""Continuous-time ICP odometry with a WNOA motion prior.

Each Gauss-Newton iteration (1) undistorts the scan into the vertex frame
with the current trajectory estimate, (2) associates every point with its
nearest submap point, and (3) takes one Gauss-Newton step on the latest
knot ``{T_i, w_i}`` with the previous knot locked. Residuals whose
association distance exceeds the truncation distance get zero weight. With
``max_normal_angle`` set, point-to-plane pairs whose scan and submap normals
disagree are dropped as well.

Radar scans may additionally carry a Doppler range correction computed
from the interpolated body velocity at each point time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import gp
from . import liegroup as lg
from .errors import DegenerateInputError, ModelError
from .pointcloud import NnIndex, PointCloud, TimedPoint

log = logging.getLogger(__name__)

POINT_TO_POINT = "point-to-point"
POINT_TO_PLANE = "point-to-plane"


@dataclass(frozen=True)
class MeasurementModel:
    kind: Literal["point-to-point", "point-to-plane"] = POINT_TO_PLANE
    base_weight: float = 100.0
    truncation_dist: float = 0.5
    # optional: also drop point-to-plane pairs whose normals disagree by more than this (rad)
    max_normal_angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (POINT_TO_POINT, POINT_TO_PLANE):
            raise ModelError(f"unknown measurement model {self.kind!r}")
        if not self.truncation_dist > 0 or not self.base_weight > 0:
            raise ModelError("truncation distance and base weight must be positive")
        if self.max_normal_angle is not None and not 0 < self.max_normal_angle <= np.pi / 2:
            raise ModelError("max_normal_angle must lie in (0, pi/2]")


@dataclass(frozen=True)
class DopplerConfig:
    enabled: bool = False
    beta: float = 0.0
    extrinsic_sr: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        object.__setattr__(self, "extrinsic_sr", np.asarray(self.extrinsic_sr, dtype=float))
        if not np.isfinite(self.beta):
            raise ModelError("beta must be finite")


@dataclass
class OdometryResult:
    pose: np.ndarray
    velocity: np.ndarray
    time: float
    iterations: int
    inlier_fraction: float
    converged: bool
    information: np.ndarray  # 12x12 Gauss-Newton information of {T_i, w_i}
    cost_history: list = field(default_factory=list)

    @property
    def knot(self) -> gp.TrajectoryKnot:
        return gp.TrajectoryKnot(self.time, self.pose, self.velocity)

    @property
    def pose_covariance(self) -> np.ndarray:
        cov = np.linalg.inv(self.information)[:6, :6]
        return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class IcpOptions:
    max_iterations: int = 40
    convergence_tol: float = 1e-6


def weight_matrix(model: MeasurementModel, map_point: TimedPoint) -> np.ndarray:
    """Information matrix of one association, ``R_j^-1``."""
    if model.kind == POINT_TO_POINT:
        return model.base_weight * np.eye(3)
    if map_point.normal is None:
        raise ModelError("point-to-plane weighting needs a map normal")
    n = np.asarray(map_point.normal, dtype=float)
    return model.base_weight * np.outer(n, n)


def weight_matrices(model: MeasurementModel, normals: Optional[np.ndarray], n: int) -> np.ndarray:
    if model.kind == POINT_TO_POINT:
        return np.broadcast_to(model.base_weight * np.eye(3), (n, 3, 3))
    if normals is None:
        raise ModelError("point-to-plane weighting needs map normals")
    return model.base_weight * np.einsum("ni,nj->nij", normals, normals)


def directions(points: np.ndarray) -> np.ndarray:
    """Unit vectors from the sensor origin to each point."""
    points = np.asarray(points, dtype=float)
    norm = np.linalg.norm(points, axis=1, keepdims=True)
    return points / np.where(norm > 0, norm, 1.0)


def doppler_correction(q: np.ndarray, direction: np.ndarray, varpi_t: np.ndarray, cfg: DopplerConfig) -> np.ndarray:
    """Additive range correction ``beta a a^T (q^odot Ad(T_sr) w)``.

    ``q``, ``direction``: (N, 3) or (3,) in the sensor frame; ``varpi_t``:
    (N, 6) or (6,) robot-frame body velocities at the point times.
    """
    single = np.ndim(q) == 1 and np.ndim(direction) == 1
    q = np.atleast_2d(np.asarray(q, dtype=float))
    a = np.atleast_2d(np.asarray(direction, dtype=float))
    w_s = np.atleast_2d(np.asarray(varpi_t, dtype=float)) @ lg.adjoint(cfg.extrinsic_sr).T
    # apparent velocity of a static point at q, seen in the sensor frame
    u = w_s[:, :3] + np.cross(w_s[:, 3:], q)
    radial = np.einsum("ni,ni->n", a, u)
    out = cfg.beta * radial[:, None] * a
    return out[0] if single else out


def _interp_coefficients_batch(t_a: float, t_b: float, t: np.ndarray):
    tau = t - t_a
    s = t_b - t
    dt = t_b - t_a
    q = np.stack(
        [np.stack([tau**3 / 3, tau**2 / 2], -1), np.stack([tau**2 / 2, tau], -1)], -2
    )
    phi_s_t = np.zeros(t.shape + (2, 2))
    phi_s_t[..., 0, 0] = 1.0
    phi_s_t[..., 1, 1] = 1.0
    phi_s_t[..., 1, 0] = s  # transpose of [[1, s], [0, 1]]
    psi = q @ phi_s_t @ gp.q_inv_scalar(dt)
    phi_tau = np.zeros(t.shape + (2, 2))
    phi_tau[..., 0, 0] = 1.0
    phi_tau[..., 1, 1] = 1.0
    phi_tau[..., 0, 1] = tau
    lam = phi_tau - psi @ gp.transition(dt)
    return lam, psi


@dataclass
class TrajectorySample:
    """Poses, velocities and their state Jacobians at a set of times."""

    poses: np.ndarray  # (N, 4, 4)
    velocities: np.ndarray  # (N, 6)
    d_pose: np.ndarray  # (N, 6, 12) left perturbation of T(t) w.r.t. state
    d_vel: np.ndarray  # (N, 6, 12)


def sample_trajectory(
    prev: gp.TrajectoryKnot, cur: gp.TrajectoryKnot, times: np.ndarray, velocity_jacobian: bool = True
) -> TrajectorySample:
    """Query the two-knot trajectory at ``times``.

    Times between the knots are GP-interpolated, later times use the
    constant-velocity prior mean from ``cur``, earlier times the one from
    ``prev`` (independent of the state). ``velocity_jacobian=False`` skips the
    costly exact ``d_vel`` between the knots (left at its leading term) for
    callers that only use poses.
    """
    times = np.asarray(times, dtype=float)
    # scan points share per-column times, so evaluate each distinct time once
    uniq, inv = np.unique(times, return_inverse=True)
    if len(uniq) < len(times):
        s = _sample_unique(prev, cur, uniq, velocity_jacobian)
        inv = inv.reshape(-1)
        return TrajectorySample(s.poses[inv], s.velocities[inv], s.d_pose[inv], s.d_vel[inv])
    return _sample_unique(prev, cur, times, velocity_jacobian)


def _sample_unique(prev, cur, times: np.ndarray, velocity_jacobian: bool) -> TrajectorySample:
    n = len(times)
    poses = np.zeros((n, 4, 4))
    vels = np.zeros((n, 6))
    d_pose = np.zeros((n, 6, 12))
    d_vel = np.zeros((n, 6, 12))

    before = times <= prev.time
    after = times > cur.time
    inside = ~before & ~after

    if np.any(before):
        dt = times[before] - prev.time
        poses[before] = lg.exp_se3(dt[:, None] * prev.velocity) @ prev.pose
        vels[before] = prev.velocity

    if np.any(after):
        dt = times[after] - cur.time
        step = lg.exp_se3(dt[:, None] * cur.velocity)
        poses[after] = step @ cur.pose
        vels[after] = cur.velocity
        d_pose[after, :, :6] = lg.adjoint(step)
        d_pose[after, :, 6:] = dt[:, None, None] * lg.left_jacobian(dt[:, None] * cur.velocity)
        d_vel[after, :, 6:] = np.eye(6)

    if np.any(inside):
        if not cur.time > prev.time:
            raise DegenerateInputError("current knot must be later than the previous knot")
        xi_1 = lg.log_se3(cur.pose @ lg.inverse(prev.pose))
        jinv = lg.left_jacobian_inv(xi_1)
        xidot_1 = jinv @ cur.velocity
        dj = lg.d_left_jacobian_inv_times(xi_1, cur.velocity) @ jinv
        lam, psi = _interp_coefficients_batch(prev.time, cur.time, times[inside])
        xi = (
            lam[:, 0, 1, None] * prev.velocity
            + psi[:, 0, 0, None] * xi_1
            + psi[:, 0, 1, None] * xidot_1
        )
        xidot = (
            lam[:, 1, 1, None] * prev.velocity
            + psi[:, 1, 0, None] * xi_1
            + psi[:, 1, 1, None] * xidot_1
        )
        jt = lg.left_jacobian(xi)
        poses[inside] = lg.exp_se3(xi) @ prev.pose
        vels[inside] = np.einsum("nij,nj->ni", jt, xidot)
        dxi = np.zeros((inside.sum(), 6, 12))
        dxi[:, :, :6] = psi[:, 0, 0, None, None] * jinv + psi[:, 0, 1, None, None] * dj
        dxi[:, :, 6:] = psi[:, 0, 1, None, None] * jinv
        d_pose[inside] = jt @ dxi
        dxidot = np.zeros_like(dxi)
        dxidot[:, :, :6] = psi[:, 1, 0, None, None] * jinv + psi[:, 1, 1, None, None] * dj
        dxidot[:, :, 6:] = psi[:, 1, 1, None, None] * jinv
        d_vel[inside] = jt @ dxidot
        if velocity_jacobian:
            # w(t) = J(xi) xidot also moves through J(xi)
            d_vel[inside] += lg.d_left_jacobian_times(xi, xidot) @ dxi
    return TrajectorySample(poses, vels, d_pose, d_vel)


def _robot_points(scan: PointCloud, sample: TrajectorySample, extrinsic_rs: np.ndarray, doppler: DopplerConfig):
    """Sensor points (optionally Doppler-corrected) expressed in the robot frame."""
    q = scan.positions
    if doppler.enabled:
        a = directions(q)
        q = q + doppler_correction(q, a, sample.velocities, doppler)
    return q @ extrinsic_rs[:3, :3].T + extrinsic_rs[:3, 3]


def predict_points(scan: PointCloud, sample: TrajectorySample, extrinsic_rs: np.ndarray, doppler: DopplerConfig):
    """Undistort scan points into the vertex frame: ``T(t_j)^-1 T_rs (q_j + dq_j)``."""
    x_r = _robot_points(scan, sample, extrinsic_rs, doppler)
    inv = lg.inverse(sample.poses)
    return lg.transform_points(inv, x_r), x_r


def residual_jacobians(scan, sample, extrinsic_rs, doppler, x_r):
    """d e / d state for e = p_map - T(t)^-1 x_r, shape (N, 3, 12)."""
    rot_t = np.swapaxes(sample.poses[:, :3, :3], 1, 2)
    de_deps = np.zeros((len(x_r), 3, 6))
    de_deps[:, :, :3] = rot_t
    de_deps[:, :, 3:] = -rot_t @ lg.so3_hat(x_r)
    jac = de_deps @ sample.d_pose
    if doppler.enabled:
        q = scan.positions
        a = directions(q)
        qdot = np.zeros((len(q), 3, 6))
        qdot[:, :, :3] = np.eye(3)
        qdot[:, :, 3:] = -lg.so3_hat(q)
        ddq = doppler.beta * np.einsum("ni,nj->nij", a, a) @ qdot @ lg.adjoint(doppler.extrinsic_sr)
        r_rs = lg.inverse(doppler.extrinsic_sr)[:3, :3]
        jac = jac - rot_t @ r_rs @ ddq @ sample.d_vel
    return jac


def undistort(scan: PointCloud, prev: gp.TrajectoryKnot, cur: gp.TrajectoryKnot, extrinsic_rs: np.ndarray,
              doppler: DopplerConfig | None = None) -> PointCloud:
    """Motion-compensated scan expressed in the robot frame at ``cur.time``."""
    doppler = doppler or DopplerConfig()
    sample = sample_trajectory(prev, cur, scan.times, velocity_jacobian=False)
    p_k, _ = predict_points(scan, sample, extrinsic_rs, doppler)
    out = PointCloud(p_k, scan.times, _rotate_normals(scan, sample, extrinsic_rs), scan.scores, "vertex")
    return out.transformed(cur.pose, frame_id="robot")


def _rotate_normals(scan: PointCloud, sample: TrajectorySample, extrinsic_rs: np.ndarray):
    if scan.normals is None:
        return None
    n_r = scan.normals @ extrinsic_rs[:3, :3].T
    return np.einsum("nji,nj->ni", sample.poses[:, :3, :3], n_r)


def _associate(p_k: np.ndarray, index: NnIndex, model: MeasurementModel):
    dist, idx = index.query(p_k, model.truncation_dist)
    inlier = dist <= model.truncation_dist
    return idx, inlier


def ct_icp(
    scan: PointCloud,
    submap_index: NnIndex,
    prev_knot: gp.TrajectoryKnot,
    model: MeasurementModel,
    prior: gp.MotionPriorConfig,
    doppler: DopplerConfig | None = None,
    extrinsic_rs: np.ndarray | None = None,
    initial: gp.TrajectoryKnot | None = None,
    time: float | None = None,
    options: IcpOptions = IcpOptions(),
) -> OdometryResult:
    """Register one scan against the latest vertex submap.

    ``scan`` is in the sensor frame with per-point times. The estimated knot
    sits at ``time`` (default: the scan's representative time) and is
    initialised by constant-velocity extrapolation unless ``initial`` is given.
    """
    doppler = doppler or DopplerConfig()
    extrinsic_rs = np.eye(4) if extrinsic_rs is None else np.asarray(extrinsic_rs, dtype=float)
    if len(scan) == 0 or len(submap_index) == 0:
        raise DegenerateInputError("ct_icp needs a non-empty scan and submap")
    t_i = gp.representative_time(scan.times) if time is None else float(time)
    if not t_i > prev_knot.time:
        raise DegenerateInputError("scan time must follow the previous knot")
    if initial is None:
        cur = gp.TrajectoryKnot(t_i, gp.extrapolate(prev_knot, t_i), prev_knot.velocity)
    else:
        cur = gp.TrajectoryKnot(t_i, initial.pose, initial.velocity)
    map_normals = submap_index.cloud.normals
    if model.kind == POINT_TO_PLANE and map_normals is None:
        raise ModelError("point-to-plane model needs a submap with normals")

    gate_normals = (
        model.kind == POINT_TO_PLANE and model.max_normal_angle is not None and scan.normals is not None
    )
    converged = False
    costs = []
    info = np.eye(12)
    inlier_fraction = 0.0
    it = 0
    for it in range(1, options.max_iterations + 1):
        sample = sample_trajectory(prev_knot, cur, scan.times, velocity_jacobian=doppler.enabled)
        p_k, x_r = predict_points(scan, sample, extrinsic_rs, doppler)
        idx, inlier = _associate(p_k, submap_index, model)
        inlier_fraction = float(inlier.mean())
        n_in = int(inlier.sum())

        e_p, info_p = gp.motion_prior_terms(prev_knot, cur, prior)
        j_p, _ = gp.motion_prior_jacobians(prev_knot, cur)
        H = j_p.T @ info_p @ j_p
        g = j_p.T @ info_p @ e_p
        cost = 0.5 * e_p @ info_p @ e_p
        if n_in:
            sel = np.flatnonzero(inlier)
            e = submap_index.cloud.positions[idx[sel]] - p_k[sel]
            W = weight_matrices(model, None if map_normals is None else map_normals[idx[sel]], n_in)
            if gate_normals:
                nl = _rotate_normals(scan, sample, extrinsic_rs)[sel]
                agree = np.abs(np.einsum("ni,ni->n", nl, map_normals[idx[sel]])) >= np.cos(model.max_normal_angle)
                W = W * agree[:, None, None]
            sub = _sample_subset(sample, sel)
            J = residual_jacobians(scan.subset(sel), sub, extrinsic_rs, doppler, x_r[sel])
            WJ = W @ J
            H = H + np.einsum("nki,nkj->ij", J, WJ)
            g = g + np.einsum("nki,nk->i", WJ, e)
            cost += 0.5 * float(np.einsum("ni,nij,nj->", e, W, e))
        costs.append(cost)
        info = 0.5 * (H + H.T)
        delta = -np.linalg.solve(info, g)
        cur = gp.TrajectoryKnot(t_i, lg.exp_se3(delta[:6]) @ cur.pose, cur.velocity + delta[6:])
        log.debug("ct_icp it=%d cost=%.6g inliers=%.3f |dx|=%.3g", it, cost, inlier_fraction, np.linalg.norm(delta))
        if np.linalg.norm(delta) < options.convergence_tol:
            converged = True
            break

    return OdometryResult(
        pose=cur.pose,
        velocity=cur.velocity,
        time=t_i,
        iterations=it,
        inlier_fraction=inlier_fraction,
        converged=converged,
        information=info,
        cost_history=costs,
    )


def _sample_subset(sample: TrajectorySample, sel) -> TrajectorySample:
    return TrajectorySample(sample.poses[sel], sample.velocities[sel], sample.d_pose[sel], sample.d_vel[sel])


def stacked_residuals(scan, submap_positions, idx, prev_knot, cur, extrinsic_rs, doppler):
    """Residuals for fixed associations (used for derivative checks)."""
    sample = sample_trajectory(prev_knot, cur, scan.times, velocity_jacobian=doppler.enabled)
    p_k, x_r = predict_points(scan, sample, extrinsic_rs, doppler)
    return submap_positions[idx] - p_k, residual_jacobians(scan, sample, extrinsic_rs, doppler, x_r)
