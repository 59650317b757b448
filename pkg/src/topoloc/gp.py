"""White-noise-on-acceleration GP prior on SE(3).

Each knot holds a pose ``T`` (T_rk: vertex frame -> robot frame) and a
body-centric velocity ``w`` with ``dT/dt = w^ T``. Between two knots the
trajectory is expressed through the local variable
``xi(t) = ln(T(t) T_a^-1)`` whose state ``[xi, dxi/dt]`` follows a linear
WNOA model; ``dxi/dt = J(xi)^-1 w``.

Note the sign: for a robot moving forward at speed ``v``, ``w`` has
translational part ``(-v, 0, 0)`` because the vertex frame recedes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .errors import ConfigurationError, OrderingError, OutOfRangeError

DEFAULT_QC = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)


@dataclass(frozen=True)
class TrajectoryKnot:
    time: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(6))
        if not np.isfinite(self.time):
            raise ValueError("knot time must be finite")


@dataclass(frozen=True)
class MotionPriorConfig:
    qc_diag: tuple = DEFAULT_QC

    def __post_init__(self):
        qc = np.asarray(self.qc_diag, dtype=float)
        if qc.shape != (6,) or np.any(qc <= 0):
            raise ConfigurationError("qc_diag needs six positive entries")

    @property
    def qc(self) -> np.ndarray:
        return np.asarray(self.qc_diag, dtype=float)


def transition(dt: float) -> np.ndarray:
    """Scalar 2x2 transition of the WNOA model (applied blockwise)."""
    return np.array([[1.0, dt], [0.0, 1.0]])


def q_scalar(dt: float) -> np.ndarray:
    return np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])


def q_inv_scalar(dt: float) -> np.ndarray:
    return np.array([[12.0 / dt**3, -6.0 / dt**2], [-6.0 / dt**2, 4.0 / dt]])


def interp_coefficients(t_a: float, t_b: float, t: float):
    """Scalar 2x2 matrices (Lambda, Psi) with gamma(t) = Lambda gamma_a + Psi gamma_b.

    Q_c cancels because both covariances share it as a Kronecker factor.
    """
    tau = t - t_a
    dt = t_b - t_a
    psi = q_scalar(tau) @ transition(t_b - t).T @ q_inv_scalar(dt)
    lam = transition(tau) - psi @ transition(dt)
    return lam, psi


def _local_state(knot_a: TrajectoryKnot, knot_b: TrajectoryKnot):
    xi_b = lg.log_se3(knot_b.pose @ lg.inverse(knot_a.pose))
    jinv = lg.left_jacobian_inv(xi_b)
    return xi_b, jinv, jinv @ knot_b.velocity


def interpolate(knot_a: TrajectoryKnot, knot_b: TrajectoryKnot, t: float, cfg: MotionPriorConfig | None = None):
    """Posterior-mean pose and velocity at ``knot_a.time <= t <= knot_b.time``."""
    if not knot_b.time > knot_a.time:
        raise OrderingError("knots must be strictly increasing in time")
    if t < knot_a.time or t > knot_b.time:
        raise OutOfRangeError(f"t={t} outside [{knot_a.time}, {knot_b.time}]")
    if t == knot_a.time:
        return knot_a.pose.copy(), knot_a.velocity.copy()
    if t == knot_b.time:
        return knot_b.pose.copy(), knot_b.velocity.copy()
    xi_b, _, xidot_b = _local_state(knot_a, knot_b)
    lam, psi = interp_coefficients(knot_a.time, knot_b.time, t)
    xi = lam[0, 1] * knot_a.velocity + psi[0, 0] * xi_b + psi[0, 1] * xidot_b
    xidot = lam[1, 1] * knot_a.velocity + psi[1, 0] * xi_b + psi[1, 1] * xidot_b
    pose = lg.exp_se3(xi) @ knot_a.pose
    return pose, lg.left_jacobian(xi) @ xidot


def extrapolate(knot: TrajectoryKnot, t: float) -> np.ndarray:
    """Constant-velocity prior mean ``exp((t - t_k) w) T_k``."""
    if t < knot.time:
        raise OutOfRangeError("extrapolation only runs forward in time")
    return lg.exp_se3((t - knot.time) * knot.velocity) @ knot.pose


def motion_prior_terms(knot_prev: TrajectoryKnot, knot_cur: TrajectoryKnot, cfg: MotionPriorConfig):
    """Prior error (12,) and information (12, 12) for a consecutive knot pair."""
    dt = knot_cur.time - knot_prev.time
    if not dt > 0:
        raise OrderingError("motion prior needs knot_cur.time > knot_prev.time")
    xi, _, xidot = _local_state(knot_prev, knot_cur)
    error = np.concatenate([xi - dt * knot_prev.velocity, xidot - knot_prev.velocity])
    info = np.kron(q_inv_scalar(dt), np.diag(1.0 / cfg.qc))
    return error, info


def motion_prior_jacobians(knot_prev: TrajectoryKnot, knot_cur: TrajectoryKnot):
    """Jacobians of the prior error w.r.t. (dT_cur, dw_cur) and (dT_prev, dw_prev).

    Both are 12x12 for left pose perturbations and additive velocity
    perturbations.
    """
    dt = knot_cur.time - knot_prev.time
    xi, jinv, _ = _local_state(knot_prev, knot_cur)
    d_jinv_w = lg.d_left_jacobian_inv_times(xi, knot_cur.velocity)
    # xi = ln(T_cur T_prev^-1); d xi / d(eps_cur) = J^-1, d xi / d(eps_prev) = -J^-1 Ad(T_cur T_prev^-1)
    dxi_cur = jinv
    dxi_prev = -jinv @ lg.adjoint(knot_cur.pose @ lg.inverse(knot_prev.pose))
    eye, zero = np.eye(6), np.zeros((6, 6))
    j_cur = np.block([[dxi_cur, zero], [d_jinv_w @ dxi_cur, jinv]])
    j_prev = np.block([[dxi_prev, -dt * eye], [d_jinv_w @ dxi_prev, -eye]])
    return j_cur, j_prev


def representative_time(times: np.ndarray) -> float:
    """Midpoint between the first and last point time of a scan."""
    times = np.asarray(times, dtype=float)
    return float(0.5 * (times.min() + times.max()))
