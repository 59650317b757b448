"""Repeat-pass localization: Gauss-Newton ICP against a teach submap with a pose prior."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .ct_icp import MeasurementModel
from .errors import ConfigurationError, DegenerateInputError
from .pointcloud import NnIndex, PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AcceptanceRule:
    min_inlier_fraction: float = 0.4
    max_translation_change: float = 5.0


@dataclass(frozen=True)
class LocalizationOptions:
    max_iterations: int = 40
    convergence_tol: float = 1e-6
    max_halvings: int = 8
    acceptance: AcceptanceRule = field(default_factory=AcceptanceRule)


@dataclass
class LocalizationResult:
    pose: np.ndarray  # T_rm
    covariance: np.ndarray
    inlier_fraction: float
    accepted: bool
    converged: bool = False
    iterations: int = 0
    cost: float = 0.0
    prior_cost: float = 0.0


def se2_project(T: np.ndarray):
    """(lateral, longitudinal, heading) of a vehicle-frame transform."""
    T = np.asarray(T, dtype=float)
    return float(T[1, 3]), float(T[0, 3]), float(np.arctan2(T[1, 0], T[0, 0]))


class _Problem:
    def __init__(self, live, index, prior_mean, prior_info, model):
        self.x = live.positions
        self.live_normals = live.normals
        self.index = index
        self.map = index.cloud
        self.prior_mean = prior_mean
        self.prior_info = prior_info
        self.model = model
        self.plane = self.map.normals is not None
        self.gate = self.plane and live.normals is not None and model.max_normal_angle is not None

    def _weights(self, idx):
        w = self.model.base_weight
        if self.plane:
            n = self.map.normals[idx]
            return w * np.einsum("ni,nj->nij", n, n)
        return np.broadcast_to(w * np.eye(3), (len(idx), 3, 3))

    def evaluate(self, T, with_jacobian=False):
        """Cost, inlier fraction and (optionally) the normal equations at ``T``."""
        xi_p = lg.log_se3(self.prior_mean @ lg.inverse(T))
        cost = 0.5 * xi_p @ self.prior_info @ xi_p
        p = lg.transform_points(lg.inverse(T), self.x)
        dist, idx = self.index.query(p, self.model.truncation_dist)
        inl = np.flatnonzero(dist <= self.model.truncation_dist)
        if self.gate:
            n_m = self.live_normals[inl] @ T[:3, :3]
            agree = np.abs(np.einsum("ni,ni->n", n_m, self.map.normals[idx[inl]])) >= np.cos(self.model.max_normal_angle)
            inl = inl[agree]
        e = self.map.positions[idx[inl]] - p[inl]
        W = self._weights(idx[inl])
        cost += 0.5 * float(np.einsum("ni,nij,nj->", e, W, e))
        frac = len(inl) / len(self.x)
        if not with_jacobian:
            return cost, frac
        j_p = -lg.left_jacobian_inv(-xi_p)
        H = j_p.T @ self.prior_info @ j_p
        g = j_p.T @ self.prior_info @ xi_p
        if len(inl):
            J = T[:3, :3].T @ lg.odot(self.x[inl])[:, :3, :]
            WJ = W @ J
            H = H + np.einsum("nki,nkj->ij", J, WJ)
            g = g + np.einsum("nki,nk->i", WJ, e)
        return cost, frac, 0.5 * (H + H.T), g


def localize(
    live: PointCloud,
    submap_index: NnIndex,
    prior_mean: np.ndarray,
    prior_cov: np.ndarray,
    model: MeasurementModel,
    options: LocalizationOptions = LocalizationOptions(),
) -> LocalizationResult:
    """Minimize prior + truncated ICP cost over ``T_rm``, starting at the prior mean.

    Point-to-plane weighting is used whenever the submap carries normals,
    otherwise point-to-point, whatever ``model.kind`` says. The model's normal
    gate applies only when both clouds carry normals.
    """
    if len(live) == 0 or len(submap_index) == 0:
        raise DegenerateInputError("localize needs a non-empty live scan and submap")
    prior_cov = np.asarray(prior_cov, dtype=float)
    try:
        prior_info = np.linalg.inv(prior_cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("prior covariance is singular") from exc
    if not np.all(np.isfinite(prior_info)) or np.linalg.cond(prior_cov) > 1e15:
        raise ConfigurationError("prior covariance is singular")
    prior_info = 0.5 * (prior_info + prior_info.T)
    prior_mean = np.asarray(prior_mean, dtype=float)

    prob = _Problem(live, submap_index, prior_mean, prior_info, model)
    T = prior_mean.copy()
    prior_cost, _ = prob.evaluate(T)
    cost = prior_cost
    converged = False
    H = prior_info
    it = 0
    for it in range(1, options.max_iterations + 1):
        cost, frac, H, g = prob.evaluate(T, with_jacobian=True)
        delta = -np.linalg.solve(H, g)
        if np.linalg.norm(delta) < options.convergence_tol:
            converged = True
            break
        step = 1.0
        for _ in range(options.max_halvings + 1):
            T_new = lg.exp_se3(step * delta) @ T
            new_cost, _ = prob.evaluate(T_new)
            if new_cost <= cost:
                break
            step *= 0.5
        else:
            # no descent along the Gauss-Newton direction: stationary up to association changes
            converged = True
            break
        T = T_new
        log.debug("localize it=%d cost=%.6g step=%.3g", it, new_cost, step)
        if np.linalg.norm(step * delta) < options.convergence_tol:
            converged = True
            cost = new_cost
            break

    cost, frac = prob.evaluate(T)
    _, _, H, _ = prob.evaluate(T, with_jacobian=True)
    cov = np.linalg.inv(H)
    shift = np.linalg.norm(lg.inverse(T)[:3, 3] - lg.inverse(prior_mean)[:3, 3])
    rule = options.acceptance
    accepted = bool(
        converged and frac >= rule.min_inlier_fraction and shift < rule.max_translation_change
    )
    return LocalizationResult(
        pose=T,
        covariance=0.5 * (cov + cov.T),
        inlier_fraction=float(frac),
        accepted=accepted,
        converged=converged,
        iterations=it,
        cost=float(cost),
        prior_cost=float(prior_cost),
    )
