"""Point clouds, lidar preprocessing and exact nearest-neighbour search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, EmptyIndexError


@dataclass(frozen=True)
class PointCloud:
    """Points with per-point timestamps and optional normals/scores.

    ``positions`` is (N, 3), ``times`` (N,). ``normals`` and ``scores`` are
    either both None or (N, 3) / (N,).
    """

    positions: np.ndarray
    times: np.ndarray
    normals: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    frame_id: str = "sensor"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if len(times) != len(pos):
            raise ValueError("positions and times differ in length")
        if (self.normals is None) != (self.scores is None):
            raise ValueError("normals and scores must be given together")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "times", times)
        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            scores = np.asarray(self.scores, dtype=float).reshape(-1)
            if len(normals) != len(pos) or len(scores) != len(pos):
                raise ValueError("normals/scores length mismatch")
            object.__setattr__(self, "normals", normals)
            object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.positions[idx],
            self.times[idx],
            None if self.normals is None else self.normals[idx],
            None if self.scores is None else self.scores[idx],
            self.frame_id,
        )

    def transformed(self, T: np.ndarray, frame_id: Optional[str] = None) -> "PointCloud":
        T = np.asarray(T, dtype=float)
        pos = self.positions @ T[:3, :3].T + T[:3, 3]
        normals = None if self.normals is None else self.normals @ T[:3, :3].T
        return PointCloud(pos, self.times, normals, self.scores, frame_id or self.frame_id)

    @staticmethod
    def empty(frame_id: str = "sensor", with_normals: bool = False) -> "PointCloud":
        return PointCloud(
            np.zeros((0, 3)),
            np.zeros(0),
            np.zeros((0, 3)) if with_normals else None,
            np.zeros(0) if with_normals else None,
            frame_id,
        )

    @staticmethod
    def concat(clouds, frame_id: Optional[str] = None) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud.empty(frame_id or "sensor")
        with_normals = all(c.has_normals for c in clouds)
        return PointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.times for c in clouds]),
            np.concatenate([c.normals for c in clouds]) if with_normals else None,
            np.concatenate([c.scores for c in clouds]) if with_normals else None,
            frame_id or clouds[0].frame_id,
        )


class TimedPoint(NamedTuple):
    position: np.ndarray
    timestamp: float
    normal: Optional[np.ndarray] = None
    normal_score: Optional[float] = None


def voxel_downsample(cloud: PointCloud, dl: float) -> PointCloud:
    """Keep, per voxel of size ``dl``, the point closest to the voxel center.

    The grid is anchored at the frame origin. Ties go to the earlier point.
    """
    if dl <= 0:
        raise ConfigurationError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.positions / dl).astype(np.int64)
    centers = (keys + 0.5) * dl
    dist = np.sum((cloud.positions - centers) ** 2, axis=1)
    keys -= keys.min(axis=0)
    ext = keys.max(axis=0) + 1
    if float(ext[0]) * float(ext[1]) * float(ext[2]) < 2**62:
        inverse = (keys[:, 0] * ext[1] + keys[:, 1]) * ext[2] + keys[:, 2]
    else:
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    # stable sort by (voxel, distance, acquisition index)
    order = np.lexsort((np.arange(len(cloud)), dist, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    keep = np.sort(order[first])
    return cloud.subset(keep)


def score_normals(
    down: PointCloud,
    raw: PointCloud,
    k: int = 20,
    max_radius: float = np.inf,
    min_planarity: float = 0.0,
    sensor_origin=(0.0, 0.0, 0.0),
) -> PointCloud:
    """PCA normal and feature score ``1 - l_min / l_max`` for every point of ``down``.

    Neighbours are the ``k`` nearest raw points within ``max_radius``. Points
    with fewer than three neighbours are dropped, as are points whose
    neighbourhood is degenerate beyond a plane (middle eigenvalue below
    ``min_planarity * l_max``), since their normal is undefined.
    Normals are flipped to face ``sensor_origin``.
    """
    if len(raw) == 0:
        raise ConfigurationError("raw scan is empty")
    if k < 3:
        raise ConfigurationError("need at least 3 neighbours")
    if len(down) == 0:
        return PointCloud.empty(down.frame_id, with_normals=True)
    k_eff = min(k, len(raw))
    tree = cKDTree(raw.positions)
    dist, idx = tree.query(down.positions, k=k_eff, distance_upper_bound=max_radius)
    dist = dist.reshape(len(down), k_eff)
    idx = idx.reshape(len(down), k_eff)
    valid = np.isfinite(dist)
    count = valid.sum(axis=1)
    safe_idx = np.where(valid, idx, 0)
    nbrs = raw.positions[safe_idx]
    w = valid[..., None].astype(float)
    mean = (nbrs * w).sum(axis=1) / np.maximum(count, 1)[:, None]
    centered = nbrs - mean[:, None, :]
    centered *= w
    cov = np.matmul(centered.transpose(0, 2, 1), centered) / np.maximum(count, 1)[:, None, None]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    lmin, lmid, lmax = evals[:, 0], evals[:, 1], evals[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(lmax > 0, 1.0 - lmin / lmax, 0.0)
        planar_ok = lmid >= min_planarity * lmax
    score = np.clip(score, 0.0, 1.0)
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    to_origin = np.asarray(sensor_origin, dtype=float) - down.positions
    flip = np.einsum("ni,ni->n", normals, to_origin) < 0
    normals[flip] *= -1
    keep = (count >= 3) & planar_ok
    return PointCloud(
        down.positions[keep], down.times[keep], normals[keep], score[keep], down.frame_id
    )


def filter_by_score(cloud: PointCloud, min_score: float = 0.95, max_points: int = 20000) -> PointCloud:
    """Keep points scoring above ``min_score``, at most ``max_points`` of the best."""
    if cloud.scores is None:
        raise ConfigurationError("cloud carries no scores")
    idx = np.flatnonzero(cloud.scores > min_score)
    if len(idx) > max_points:
        order = np.argsort(-cloud.scores[idx], kind="stable")[:max_points]
        idx = np.sort(idx[order])
    return cloud.subset(idx)


@dataclass
class NnIndex:
    """Exact nearest-neighbour index over a point cloud (kd-tree)."""

    cloud: PointCloud
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        self._tree = cKDTree(self.cloud.positions) if len(self.cloud) else None

    def __len__(self) -> int:
        return len(self.cloud)

    def query(self, pts: np.ndarray, max_distance: float = np.inf):
        """Vectorized nearest neighbour: (distances, indices).

        Points with no neighbour within ``max_distance`` get distance inf and
        index ``len(self)``; a finite bound only speeds up the search.
        """
        if self._tree is None:
            raise EmptyIndexError("nearest-neighbour query on an empty index")
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if np.isinf(max_distance):
            return self._tree.query(pts, k=1)
        # the bound is exclusive in scipy; nudge it so that dist == max_distance still matches
        return self._tree.query(pts, k=1, distance_upper_bound=np.nextafter(max_distance, np.inf))


def nearest(index: NnIndex, query) -> tuple[TimedPoint, float]:
    dist, idx = index.query(query)
    i = int(idx[0])
    c = index.cloud
    point = TimedPoint(
        c.positions[i].copy(),
        float(c.times[i]),
        None if c.normals is None else c.normals[i].copy(),
        None if c.scores is None else float(c.scores[i]),
    )
    return point, float(dist[0])


def preprocess_lidar(
    raw: PointCloud,
    voxel_size: float = 0.3,
    k: int = 20,
    min_score: float = 0.95,
    max_points: int = 20000,
    max_radius: float = np.inf,
    min_planarity: float = 0.0,
) -> PointCloud:
    """Voxel filter, PCA scoring and score filtering of one raw lidar scan."""
    down = voxel_downsample(raw, voxel_size)
    if len(down) == 0:
        return PointCloud.empty(raw.frame_id, with_normals=True)
    scored = score_normals(down, raw, k=k, max_radius=max_radius, min_planarity=min_planarity)
    return filter_by_score(scored, min_score, max_points)
