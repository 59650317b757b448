import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from topoloc import liegroup as lg
from topoloc.errors import BrokenChainError, DegenerateInputError
from topoloc.pointcloud import PointCloud
from topoloc.posegraph import (
    SPATIAL,
    TEMPORAL,
    Edge,
    KeyframeThresholds,
    PoseGraph,
    Vertex,
    accumulate_submap,
    add_localization_edge,
    closest_map_vertex,
    compound,
    localization_prior,
    should_spawn,
)


def translation(x, y=0.0, z=0.0):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def chain_graph(run, means, covs=None, stamps=None):
    """Vertices run/0..n linked by temporal edges with means T_{i,i-1}."""
    g = PoseGraph()
    _add_chain(g, run, means, covs, stamps)
    return g


def _add_chain(g, run, means, covs=None, stamps=None):
    n = len(means) + 1
    for i in range(n):
        g.add_vertex(Vertex((run, i), PointCloud.empty("vertex"), float(i if stamps is None else stamps[i])))
    for i, T in enumerate(means, start=1):
        cov = np.zeros((6, 6)) if covs is None else covs[i - 1]
        g.add_edge(Edge((run, i - 1), (run, i), T, cov, TEMPORAL))
    return g


def test_should_spawn_examples():
    assert not should_spawn(np.eye(4))
    assert should_spawn(translation(10.1))
    assert not should_spawn(translation(9.9))
    assert should_spawn(lg.exp_se3([0, 0, 0, 0, 0, np.deg2rad(31)]))
    assert not should_spawn(lg.exp_se3([0, 0, 0, 0, 0, np.deg2rad(29)]))
    assert should_spawn(translation(2.0), KeyframeThresholds(1.0, 1.0))


def test_accumulate_single_scan_in_vertex_frame():
    pts = np.random.default_rng(0).uniform(-5, 5, (200, 3))
    c = PointCloud(pts, np.zeros(200))
    out = accumulate_submap([(c, np.eye(4))], np.eye(4), voxel_size=None)
    assert np.array_equal(out.positions, pts)


def test_accumulate_offset_copies_coincide():
    rng = np.random.default_rng(1)
    g = np.linspace(0, 6, 61)
    u, v = np.meshgrid(g, g)
    wall = np.c_[np.full(u.size, 8.0), u.ravel() - 3, v.ravel()]
    T_ra = lg.exp_se3([0.7, -0.2, 0, 0, 0, 0.1])  # second robot pose relative to the first
    first = PointCloud(wall, np.zeros(len(wall)))
    second = first.transformed(T_ra)  # same surface seen from the moved robot
    out = accumulate_submap([(first, np.eye(4)), (second, T_ra)], np.eye(4), voxel_size=0.3)
    # every merged point lies on the original wall plane
    assert np.all(np.abs(out.positions[:, 0] - 8.0) < 0.3)
    assert len(out) < 2 * len(wall)
    with pytest.raises(DegenerateInputError):
        accumulate_submap([], np.eye(4))
    with pytest.raises(DegenerateInputError):
        accumulate_submap([(first, np.eye(4))] * 4, np.eye(4), n=3)


def test_submap_size_bounds():
    rng = np.random.default_rng(2)
    scans = [(PointCloud(rng.uniform(-3, 3, (500, 3)), np.zeros(500)), translation(0.1 * i)) for i in range(3)]
    raw = accumulate_submap(scans, np.eye(4), voxel_size=None)
    down = accumulate_submap(scans, np.eye(4), voxel_size=0.3)
    assert len(raw) == 1500
    assert len(down) < len(raw)


def test_relative_along_chain():
    g = chain_graph(0, [translation(-1), translation(-2), translation(-3), translation(-4)])
    T_40, _ = g.relative((0, 4), (0, 0))
    assert np.allclose(T_40, translation(-10))
    T_04, _ = g.relative((0, 0), (0, 4))
    assert np.allclose(T_04, translation(10))
    with pytest.raises(BrokenChainError):
        g.relative((0, 0), (1, 0))


def test_localization_prior_examples():
    g = chain_graph(0, [np.eye(4)] * 3)
    _add_chain(g, 1, [np.eye(4)] * 2)
    g.add_edge(Edge((0, 1), (1, 0), np.eye(4), np.zeros((6, 6)), SPATIAL))
    T, cov = localization_prior(g, (1, 2), (1, 0), (0, 1), (0, 3), np.eye(4))
    assert np.allclose(T, np.eye(4)) and np.allclose(cov, 0)

    # translations 1, 2, 3 and 4 along the prior chain add up
    g = chain_graph(0, [translation(0), translation(-4)])
    _add_chain(g, 1, [translation(2)])
    g.add_edge(Edge((0, 0), (1, 0), translation(3), np.zeros((6, 6)), SPATIAL))
    T, _ = localization_prior(g, (1, 1), (1, 0), (0, 0), (0, 2), translation(1))
    assert np.allclose(T, translation(10))


def test_two_edge_covariance_adds():
    S = np.eye(6) * 0.01
    T, cov = compound([(np.eye(4), S), (np.eye(4), S)])
    assert np.allclose(T, np.eye(4)) and np.allclose(cov, 2 * S)


def test_missing_spatial_edge_breaks_the_chain():
    g = chain_graph(0, [np.eye(4)])
    _add_chain(g, 1, [np.eye(4)])
    with pytest.raises(BrokenChainError):
        localization_prior(g, (1, 1), (1, 0), (0, 0), (0, 1), np.eye(4))


twist = arrays(float, 6, elements=st.floats(-1, 1))


@settings(max_examples=50)
@given(st.lists(twist, min_size=2, max_size=6), st.lists(twist, min_size=2, max_size=6), twist)
def test_cycle_teach_repeat_teach_is_identity(teach_steps, repeat_steps, offset):
    # noise-free world poses for both runs; edges are consistent with them
    W_teach = [np.eye(4)]
    for xi in teach_steps:
        W_teach.append(W_teach[-1] @ lg.exp_se3(xi))
    W_rep = [lg.exp_se3(offset)]
    for xi in repeat_steps:
        W_rep.append(W_rep[-1] @ lg.exp_se3(xi))
    g = PoseGraph()
    for run, W in ((0, W_teach), (1, W_rep)):
        for i in range(len(W)):
            g.add_vertex(Vertex((run, i), PointCloud.empty(), float(i)))
        for i in range(1, len(W)):
            g.add_edge(Edge((run, i - 1), (run, i), lg.inverse(W[i]) @ W[i - 1], np.zeros((6, 6)), TEMPORAL))
    k_prime, m_prime = (1, 0), (0, 0)
    g.add_edge(Edge(m_prime, k_prime, lg.inverse(W_rep[0]) @ W_teach[0], np.zeros((6, 6)), SPATIAL))
    k, m = (1, len(W_rep) - 1), (0, len(W_teach) - 1)
    T_rm, _ = localization_prior(g, k, k_prime, m_prime, m, np.eye(4))
    # closing the loop back through the teach chain
    T_mm0, _ = g.relative(m, m_prime)
    T_k0k, _ = g.relative(k_prime, k)
    loop = lg.inverse(T_k0k) @ g.spatial_edge(k_prime).mean @ lg.inverse(T_mm0) @ lg.inverse(T_rm)
    assert np.allclose(loop, np.eye(4), atol=1e-9)
    assert np.allclose(T_rm, lg.inverse(W_rep[-1]) @ W_teach[-1], atol=1e-9)


def test_closest_map_vertex_examples():
    g = chain_graph(0, [translation(-9)] * 4)
    assert closest_map_vertex(g, (0, 1), np.eye(4)) == (0, 1)
    # robot 4 m past vertex 1 towards vertex 2 (9 m spacing)
    assert closest_map_vertex(g, (0, 1), translation(-4)) == (0, 1)
    assert closest_map_vertex(g, (0, 1), translation(-5)) == (0, 2)
    assert closest_map_vertex(g, (0, 0), translation(-30)) == (0, 3)
    # search window limits the candidates
    assert closest_map_vertex(g, (0, 0), translation(-36), window=1) == (0, 1)


def test_add_localization_edge_examples():
    g = chain_graph(0, [np.eye(4)])
    _add_chain(g, 1, [])
    Z = np.zeros((6, 6))
    e = add_localization_edge(g, (1, 0), (0, 0), translation(1), translation(1), Z, Z)
    assert e.kind == SPATIAL and np.allclose(e.mean, np.eye(4))
    e = add_localization_edge(g, (1, 0), (0, 1), translation(1), translation(1.2), Z, Z)
    assert np.allclose(e.mean, translation(0.2))
    # latest wins: one spatial edge per repeat vertex
    assert sum(1 for x in g.edges if x.kind == SPATIAL and x.to_id == (1, 0)) == 1
    assert g.spatial_edge((1, 0)).from_id == (0, 1)
