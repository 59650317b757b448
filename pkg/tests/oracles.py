"""Independent reference implementations used as test oracles.

Nothing here imports the package; each function is written from the textbook
definition, favouring clarity over speed.
"""

import numpy as np
from scipy.linalg import expm


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def wedge(xi):
    """4x4 matrix of a (rho, phi) twist."""
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[3:])
    m[:3, 3] = xi[:3]
    return m


def ad_wedge(xi):
    """6x6 adjoint-algebra matrix of a (rho, phi) twist."""
    m = np.zeros((6, 6))
    m[:3, :3] = skew(xi[3:])
    m[:3, 3:] = skew(xi[:3])
    m[3:, 3:] = skew(xi[3:])
    return m


def expm_series(a, terms=20):
    """Truncated power series of the matrix exponential."""
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def exp_twist(xi):
    return expm(wedge(np.asarray(xi, dtype=float)))


def left_jacobian(xi, nodes=64):
    """J(xi) = int_0^1 exp(s ad(xi)) ds by Gauss-Legendre quadrature."""
    s, w = np.polynomial.legendre.leggauss(nodes)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    A = ad_wedge(np.asarray(xi, dtype=float))
    return sum(wi * expm(si * A) for si, wi in zip(s, w))


def bfar_bruteforce(power, a, b, window, guard, statistic):
    """Sliding-window CFAR evaluated cell by cell with plain Python loops."""
    power = [float(p) for p in power]
    n = len(power)
    hits = []
    for i in range(window + guard, n - window - guard):
        left = power[i - guard - window : i - guard]
        right = power[i + guard + 1 : i + guard + 1 + window]
        ml = sum(left) / window
        mr = sum(right) / window
        z = max(ml, mr) if statistic == "greatest-of" else 0.5 * (ml + mr)
        if power[i] > a * z + b:
            hits.append(i)
    return hits


def nearest_bruteforce(points, query):
    d = np.linalg.norm(points - query, axis=1)
    i = int(np.argmin(d))
    return i, float(d[i])


def voxel_oracle(points, dl):
    """Per voxel, the point closest to the voxel centre (ties broken by input order)."""
    best = {}
    for i, p in enumerate(points):
        key = tuple(int(k) for k in np.floor(p / dl))
        centre = (np.array(key) + 0.5) * dl
        d = float(np.sum((p - centre) ** 2))
        if key not in best or d < best[key][0]:
            best[key] = (d, i)
    return sorted(i for _, i in best.values())


def se2_error(T_est, T_gt):
    """Planar error of T_gt^-1 T_est computed with explicit 2D trigonometry."""
    def planar(T):
        return T[0, 3], T[1, 3], np.arctan2(T[1, 0], T[0, 0])

    E = np.linalg.solve(T_gt, T_est)
    x, y, th = planar(E)
    return y, x, th
