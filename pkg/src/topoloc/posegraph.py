"""Topometric pose graph: vertices with local submaps, covariance-carrying edges.

Vertex ids are ``(run, index)``; the teach run is run 0. An edge stores the
transform ``T_to,from`` (points in the ``from`` frame mapped into the ``to``
frame) and a 6x6 covariance for a left perturbation of that transform.
Temporal edges link consecutive vertices of one run, spatial edges link a
repeat vertex ``k`` to the teach vertex ``m`` it was localized against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from . import liegroup as lg
from .errors import BrokenChainError, ConfigurationError, DegenerateInputError
from .pointcloud import PointCloud, voxel_downsample

VertexId = Tuple[int, int]
TEMPORAL = "temporal"
SPATIAL = "spatial"


@dataclass
class Vertex:
    id: VertexId
    submap: PointCloud
    stamp: float


@dataclass
class Edge:
    from_id: VertexId
    to_id: VertexId
    mean: np.ndarray
    covariance: np.ndarray
    kind: str = TEMPORAL

    def __post_init__(self):
        self.from_id = tuple(self.from_id)
        self.to_id = tuple(self.to_id)
        self.mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (6, 6) or not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("edge covariance must be a symmetric 6x6 matrix")
        self.covariance = cov
        if self.kind not in (TEMPORAL, SPATIAL):
            raise ValueError(f"unknown edge kind {self.kind!r}")


@dataclass(frozen=True)
class KeyframeThresholds:
    max_translation: float = 10.0
    max_rotation: float = np.deg2rad(30.0)

    def __post_init__(self):
        if not (self.max_translation > 0 and self.max_rotation > 0):
            raise ConfigurationError("keyframe thresholds must be positive")


@dataclass
class PoseGraph:
    vertices: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)

    def add_vertex(self, vertex: Vertex) -> Vertex:
        if vertex.id in self.vertices:
            raise ValueError(f"duplicate vertex {vertex.id}")
        self.vertices[vertex.id] = vertex
        return vertex

    def add_edge(self, edge: Edge) -> Edge:
        if edge.kind == SPATIAL:
            # one spatial edge per repeat vertex; the latest estimate wins
            self.edges = [
                e for e in self.edges if not (e.kind == SPATIAL and e.to_id == edge.to_id)
            ]
        self.edges.append(edge)
        return edge

    def run_vertices(self, run: int) -> list:
        return sorted(v for v in self.vertices if v[0] == run)

    def temporal_edge(self, to_id: VertexId) -> Edge:
        for e in self.edges:
            if e.kind == TEMPORAL and e.to_id == to_id:
                return e
        raise BrokenChainError(f"no temporal edge into vertex {to_id}")

    def spatial_edge(self, k: VertexId) -> Optional[Edge]:
        for e in self.edges:
            if e.kind == SPATIAL and e.to_id == tuple(k):
                return e
        return None

    def latest_spatial_edge(self, run: int) -> Optional[Edge]:
        found = [e for e in self.edges if e.kind == SPATIAL and e.to_id[0] == run]
        return max(found, key=lambda e: e.to_id[1]) if found else None

    def relative(self, a: VertexId, b: VertexId):
        """``(T_ab, cov_ab)`` along the temporal chain of a single run."""
        a, b = tuple(a), tuple(b)
        if a[0] != b[0]:
            raise BrokenChainError("temporal chain requested across runs")
        for v in (a, b):
            if v not in self.vertices:
                raise BrokenChainError(f"unknown vertex {v}")
        T, cov = np.eye(4), np.zeros((6, 6))
        lo, hi = sorted((a[1], b[1]))
        # T_hi,lo = T_hi,hi-1 ... T_lo+1,lo
        for idx in range(lo + 1, hi + 1):
            e = self.temporal_edge((a[0], idx))
            if e.from_id != (a[0], idx - 1):
                raise BrokenChainError(f"temporal edge into {e.to_id} skips a vertex")
            cov = lg.cov_compound(e.mean, e.covariance, cov)
            T = e.mean @ T
        if a[1] >= b[1]:
            return T, cov
        return lg.inverse(T), lg.cov_inverse(T, cov)


def should_spawn(T_rk: np.ndarray, th: KeyframeThresholds = KeyframeThresholds()) -> bool:
    T_rk = np.asarray(T_rk, dtype=float)
    return bool(
        np.linalg.norm(T_rk[:3, 3]) > th.max_translation
        or lg.rotation_angle(T_rk) > th.max_rotation
    )


def accumulate_submap(
    scans: Sequence[Tuple[PointCloud, np.ndarray]],
    new_vertex_pose: np.ndarray,
    voxel_size: Optional[float] = 0.3,
    n: int = 3,
) -> PointCloud:
    """Merge the last ``n`` motion-compensated scans into the new vertex frame.

    Each entry is ``(cloud, T_ra)``: a cloud in its own robot frame and that
    robot pose relative to a common frame ``a``. ``new_vertex_pose`` is
    ``T_ka`` for the new vertex ``k``. ``voxel_size=None`` skips the filter.
    """
    scans = list(scans)
    if not scans:
        raise DegenerateInputError("accumulate_submap needs at least one scan")
    if len(scans) > n:
        raise DegenerateInputError(f"at most {n} scans per submap")
    T_ka = np.asarray(new_vertex_pose, dtype=float)
    parts = [cloud.transformed(T_ka @ lg.inverse(T_ra), frame_id="vertex") for cloud, T_ra in scans]
    merged = PointCloud.concat(parts, frame_id="vertex")
    return merged if voxel_size is None else voxel_downsample(merged, voxel_size)


def localization_prior(
    graph: PoseGraph,
    k: VertexId,
    k_prime: VertexId,
    m_prime: VertexId,
    m: VertexId,
    T_rk: np.ndarray,
    cov_rk: Optional[np.ndarray] = None,
    spatial: Optional[Edge] = None,
):
    """Prior ``T_rm = T_rk T_kk' T_k'm' T_m'm`` and its compounded covariance.

    ``spatial`` overrides the stored ``k' <- m'`` edge (used to seed the very
    first localization of a repeat).
    """
    spatial = spatial or graph.spatial_edge(k_prime)
    if spatial is None or spatial.from_id != tuple(m_prime):
        raise BrokenChainError(f"no spatial edge between {m_prime} and {k_prime}")
    T_kk, cov_kk = graph.relative(k, k_prime)
    T_mm, cov_mm = graph.relative(m_prime, m)
    chain = [
        (np.asarray(T_rk, dtype=float), np.zeros((6, 6)) if cov_rk is None else np.asarray(cov_rk)),
        (T_kk, cov_kk),
        (spatial.mean, spatial.covariance),
        (T_mm, cov_mm),
    ]
    return compound(chain)


def compound(chain: Iterable[Tuple[np.ndarray, np.ndarray]]):
    """Left-to-right product of ``(T, cov)`` pairs with first-order covariance."""
    T, cov = np.eye(4), np.zeros((6, 6))
    for T_next, cov_next in chain:
        cov = lg.cov_compound(T, cov, cov_next)
        T = T @ T_next
    return T, cov


def closest_map_vertex(
    graph: PoseGraph, m_prime: VertexId, T_rm_prime: np.ndarray, window: int = 5
) -> VertexId:
    """Teach vertex nearest to the robot, searched within ``m' +- window``.

    Positions are compared in the frame of ``m'`` after compounding the
    temporal edges of the teach run.
    """
    teach = graph.run_vertices(0)
    if not teach:
        raise DegenerateInputError("teach run has no vertices")
    robot = lg.inverse(np.asarray(T_rm_prime, dtype=float))[:3, 3]
    best, best_d = None, np.inf
    for v in teach:
        if abs(v[1] - m_prime[1]) > window:
            continue
        T_mpv, _ = graph.relative(m_prime, v)
        d = np.linalg.norm(T_mpv[:3, 3] - robot)
        if d < best_d:
            best, best_d = v, d
    return best


def add_localization_edge(
    graph: PoseGraph,
    k: VertexId,
    m: VertexId,
    T_rk: np.ndarray,
    T_rm: np.ndarray,
    cov_rk: np.ndarray,
    cov_rm: np.ndarray,
) -> Edge:
    """Spatial edge ``T_km = T_rk^-1 T_rm`` from map vertex ``m`` to ``k``."""
    T_kr = lg.inverse(np.asarray(T_rk, dtype=float))
    mean = T_kr @ np.asarray(T_rm, dtype=float)
    cov = lg.cov_compound(T_kr, lg.cov_inverse(T_rk, cov_rk), cov_rm)
    return graph.add_edge(Edge(tuple(m), tuple(k), mean, cov, SPATIAL))
