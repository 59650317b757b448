"""SE(3) / se(3) algebra.

Conventions
-----------
* A transform is a 4x4 numpy array ``T_ab`` mapping homogeneous points
  expressed in frame ``b`` into frame ``a``.
* A twist is a 6-vector ``(rho, phi)``: translational part first, then
  rotational part.
* Perturbations are applied on the left: ``T = exp(eps^) @ T_bar``.

Most functions accept a single element or a leading batch axis.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

# Below this rotation angle the closed-form coefficient functions lose
# precision to cancellation; their 4th-order Taylor series are used instead.
SMALL_ANGLE = 1e-2
LOG_PI_MARGIN = 1e-6


def so3_hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def hat(xi: np.ndarray) -> np.ndarray:
    """Twist (.., 6) -> se(3) matrix (.., 4, 4)."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = so3_hat(xi[..., 3:])
    out[..., :3, 3] = xi[..., :3]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :3, 3], so3_vee(m[..., :3, :3])], axis=-1)


def curlyhat(xi: np.ndarray) -> np.ndarray:
    """Adjoint of the Lie algebra, ``ad(xi)`` (6x6)."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    phi_hat = so3_hat(xi[..., 3:])
    out[..., :3, :3] = phi_hat
    out[..., 3:, 3:] = phi_hat
    out[..., :3, 3:] = so3_hat(xi[..., :3])
    return out


def _series_or(theta, small, exact):
    """Evaluate ``exact(theta)`` away from zero and ``small(theta)`` near it."""
    theta = np.asarray(theta, dtype=float)
    is_small = theta < SMALL_ANGLE
    safe = np.where(is_small, 1.0, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(is_small, small(theta), exact(safe))


def _sinc(t):  # sin(t)/t
    return _series_or(t, lambda x: 1 - x**2 / 6 + x**4 / 120, lambda x: np.sin(x) / x)


def _cosc(t):  # (1 - cos t)/t^2
    return _series_or(t, lambda x: 0.5 - x**2 / 24 + x**4 / 720, lambda x: (1 - np.cos(x)) / x**2)


def _sinc3(t):  # (t - sin t)/t^3
    return _series_or(t, lambda x: 1 / 6 - x**2 / 120 + x**4 / 5040, lambda x: (x - np.sin(x)) / x**3)


def _c4(t):  # (t^2 + 2 cos t - 2) / (2 t^4)
    return _series_or(
        t, lambda x: 1 / 24 - x**2 / 720 + x**4 / 40320, lambda x: (x**2 + 2 * np.cos(x) - 2) / (2 * x**4)
    )


def _c5(t):  # (2t - 3 sin t + t cos t) / (2 t^5)
    return _series_or(
        t,
        lambda x: 1 / 120 - x**2 / 2520 + x**4 / 120960,
        lambda x: (2 * x - 3 * np.sin(x) + x * np.cos(x)) / (2 * x**5),
    )


def _jinv_coeff(t):  # 1/t^2 - (1 + cos t)/(2 t sin t)
    return _series_or(
        t,
        lambda x: 1 / 12 + x**2 / 720 + x**4 / 30240,
        lambda x: 1 / x**2 - (1 + np.cos(x)) / (2 * x * np.sin(x)),
    )


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    k = so3_hat(phi)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + _sinc(theta)[..., None, None] * k + _cosc(theta)[..., None, None] * k2


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    k = so3_hat(phi)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + _cosc(theta)[..., None, None] * k + _sinc3(theta)[..., None, None] * (k @ k)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    k = so3_hat(phi)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - 0.5 * k + _jinv_coeff(theta)[..., None, None] * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    w = 0.5 * so3_vee(rot - np.swapaxes(rot, -1, -2))
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(rot, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta > math.pi - LOG_PI_MARGIN):
        raise DomainError("rotation angle too close to pi for the logarithm map")
    # theta / sin(theta)
    scale = _series_or(theta, lambda x: 1 + x**2 / 6 + 7 * x**4 / 360, lambda x: x / np.sin(x))
    return scale[..., None] * w


def _q_block(rho, phi):
    """Upper-right block of the SE(3) left Jacobian."""
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    rx = so3_hat(rho)
    px = so3_hat(phi)
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    t = theta[..., 0, 0]
    return (
        0.5 * rx
        + _sinc3(t)[..., None, None] * (pr + rp + prp)
        + _c4(t)[..., None, None] * (px @ pr + rp @ px - 3 * prp)
        + _c5(t)[..., None, None] * (prp @ px + px @ prp)
    )


def exp_se3(xi: np.ndarray) -> np.ndarray:
    """Exponential map, twist (.., 6) -> transform (.., 4, 4)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = so3_exp(phi)
    out[..., :3, 3] = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    out[..., 3, 3] = 1.0
    return out


def log_se3(T: np.ndarray) -> np.ndarray:
    """Logarithm map, transform -> twist. Raises DomainError near a half turn."""
    T = np.asarray(T, dtype=float)
    phi = so3_log(T[..., :3, :3])
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), T[..., :3, 3])
    return np.concatenate([rho, phi], axis=-1)


def left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    j = so3_left_jacobian(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = j
    out[..., 3:, 3:] = j
    out[..., :3, 3:] = _q_block(rho, phi)
    return out


def left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    jinv = so3_left_jacobian_inv(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = jinv
    out[..., 3:, 3:] = jinv
    out[..., :3, 3:] = -jinv @ _q_block(rho, phi) @ jinv
    return out


def inverse(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    out = np.zeros_like(T)
    rt = np.swapaxes(T[..., :3, :3], -1, -2)
    out[..., :3, :3] = rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rt, T[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def adjoint(T: np.ndarray) -> np.ndarray:
    """Adjoint matrix Ad(T) with Ad(T) xi = (T xi^ T^-1)^v."""
    T = np.asarray(T, dtype=float)
    rot = T[..., :3, :3]
    out = np.zeros(T.shape[:-2] + (6, 6))
    out[..., :3, :3] = rot
    out[..., 3:, 3:] = rot
    out[..., :3, 3:] = so3_hat(T[..., :3, 3]) @ rot
    return out


def odot(q: np.ndarray) -> np.ndarray:
    """The 4x6 matrix with ``odot(q) @ xi == hat(xi) @ q``.

    Accepts homogeneous 4-vectors or plain 3-vectors (scale taken as 1).
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] == 3:
        eps, eta = q, np.ones(q.shape[:-1])
    else:
        eps, eta = q[..., :3], q[..., 3]
    out = np.zeros(q.shape[:-1] + (4, 6))
    out[..., :3, :3] = eta[..., None, None] * np.eye(3)
    out[..., :3, 3:] = -so3_hat(eps)
    return out


def transform_points(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply T (4x4 or batch of N) to points (N, 3)."""
    T = np.asarray(T, dtype=float)
    pts = np.asarray(pts, dtype=float)
    if T.ndim == 2:
        return pts @ T[:3, :3].T + T[:3, 3]
    return np.einsum("nij,nj->ni", T[:, :3, :3], pts) + T[:, :3, 3]


def rotation_angle(T: np.ndarray) -> float:
    """Rotation angle in [0, pi] of the rotation block (no domain restriction)."""
    rot = np.asarray(T, dtype=float)[:3, :3]
    s = np.linalg.norm(0.5 * so3_vee(rot - rot.T))
    c = 0.5 * (np.trace(rot) - 1.0)
    return float(np.arctan2(s, c))


def renormalize(T: np.ndarray) -> np.ndarray:
    """Project the rotation block back onto SO(3) (nearest rotation via SVD)."""
    T = np.array(T, dtype=float)
    u, _, vt = np.linalg.svd(T[:3, :3])
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] *= -1
        rot = u @ vt
    T[:3, :3] = rot
    T[3] = (0.0, 0.0, 0.0, 1.0)
    return T


def is_valid_transform(T: np.ndarray, tol: float = 1e-9) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    rot = T[:3, :3]
    return (
        np.allclose(rot.T @ rot, np.eye(3), atol=tol)
        and abs(np.linalg.det(rot) - 1.0) < tol
        and np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0])
    )


def from_rpy_xyz(x=0.0, y=0.0, z=0.0, roll=0.0, pitch=0.0, yaw=0.0) -> np.ndarray:
    """Transform from translation and Z-Y-X Euler angles."""
    rz = so3_exp(np.array([0.0, 0.0, yaw]))
    ry = so3_exp(np.array([0.0, pitch, 0.0]))
    rx = so3_exp(np.array([roll, 0.0, 0.0]))
    T = np.eye(4)
    T[:3, :3] = rz @ ry @ rx
    T[:3, 3] = (x, y, z)
    return T


def cov_compound(T_ab, cov_ab, cov_bc) -> np.ndarray:
    """First-order covariance of ``T_ab @ T_bc`` under left perturbations."""
    ad = adjoint(T_ab)
    out = np.asarray(cov_ab) + ad @ np.asarray(cov_bc) @ ad.T
    return 0.5 * (out + out.T)


def cov_inverse(T_ab, cov_ab) -> np.ndarray:
    """First-order covariance of ``inverse(T_ab)``."""
    ad = adjoint(inverse(T_ab))
    out = ad @ np.asarray(cov_ab) @ ad.T
    return 0.5 * (out + out.T)


# Coefficients of x / (e^x - 1) = sum B_n x^n / n!  (B_1 = -1/2).
def _bernoulli_coeffs(n: int) -> np.ndarray:
    c = np.zeros(n + 1)
    c[0] = 1.0
    for m in range(1, n + 1):
        c[m] = -sum(c[k] / math.factorial(m - k + 1) for k in range(m))
    return c


_N_SERIES = 60
_BERNOULLI = _bernoulli_coeffs(_N_SERIES)
_EXP_J = np.array([1.0 / math.factorial(n + 1) for n in range(_N_SERIES + 1)])
_BASIS_AD = curlyhat(np.eye(6))


def _series_derivative(coeffs: np.ndarray, xi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Jacobian of ``f(ad(xi)) @ v`` with respect to ``xi``.

    Uses the block identity f([[A, E], [0, A]]) = [[f(A), Df(A)[E]], [0, f(A)]]
    evaluated by Horner's rule on the vector [0; v] for all six basis
    directions E at once. ``xi`` and ``v`` may carry a leading batch axis.
    """
    a = curlyhat(xi)[..., None, :, :]
    batch = a.shape[:-3]
    m = np.zeros(batch + (6, 12, 12))
    m[..., :6, :6] = a
    m[..., 6:, 6:] = a
    m[..., :6, 6:] = _BASIS_AD
    base = np.zeros(batch + (6, 12))
    base[..., 6:] = v[..., None, :]
    y = coeffs[-1] * base
    for c in coeffs[-2::-1]:
        y = np.einsum("...kij,...kj->...ki", m, y) + c * base
    return np.swapaxes(y[..., :6], -1, -2)


def d_left_jacobian_inv_times(xi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact Jacobian of ``left_jacobian_inv(xi) @ v`` w.r.t. ``xi`` (6x6).

    Valid for rotation angles well inside the series radius (|phi| < 2*pi).
    """
    return _series_derivative(_BERNOULLI, np.asarray(xi, float), np.asarray(v, float))


def d_left_jacobian_times(xi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact Jacobian of ``left_jacobian(xi) @ v`` w.r.t. ``xi`` (6x6, or batched).

    The series of J is entire; 30 terms reach double precision for rotation
    angles up to pi.
    """
    return _series_derivative(_EXP_J[:30], np.asarray(xi, float), np.asarray(v, float))
