import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from topoloc import liegroup as lg
from topoloc.errors import FormatError
from topoloc.persistence import (
    decode_pointcloud,
    decode_polar_scan,
    encode_pointcloud,
    encode_polar_scan,
    load_graph,
    load_run,
    read_trajectory,
    read_tsv,
    save_graph,
    save_run,
    storage_bytes,
    write_trajectory,
    write_tsv,
)
from topoloc.pointcloud import PointCloud
from topoloc.posegraph import SPATIAL, TEMPORAL, Edge, PoseGraph, Vertex
from topoloc.radar import PolarScan

finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=50)
@given(arrays(float, st.tuples(st.integers(0, 50), st.just(3)), elements=finite), st.booleans())
def test_pointcloud_round_trip(pts, with_normals):
    n = len(pts)
    times = np.arange(n, dtype=float) * 0.1
    if with_normals:
        normals = np.tile([0.0, 0.6, 0.8], (n, 1))
        c = PointCloud(pts, times, normals, np.linspace(0, 1, n))
    else:
        c = PointCloud(pts, times)
    out = decode_pointcloud(encode_pointcloud(c))
    assert np.array_equal(out.positions, c.positions) and np.array_equal(out.times, c.times)
    assert out.has_normals == with_normals
    if with_normals:
        assert np.array_equal(out.normals, c.normals) and np.array_equal(out.scores, c.scores)


def test_polar_scan_round_trip():
    rng = np.random.default_rng(0)
    scan = PolarScan(np.linspace(0, 2 * np.pi, 8, endpoint=False), np.arange(8) * 0.01,
                     rng.uniform(0, 50, (8, 30)).astype(np.float32), 0.0596)
    out = decode_polar_scan(encode_polar_scan(scan))
    assert np.array_equal(out.angles, scan.angles) and np.array_equal(out.timestamps, scan.timestamps)
    assert np.array_equal(out.power, scan.power) and out.range_resolution == scan.range_resolution


def test_corrupted_files_are_rejected():
    data = encode_pointcloud(PointCloud(np.ones((3, 3)), np.zeros(3)))
    with pytest.raises(FormatError):
        decode_pointcloud(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        decode_pointcloud(data[:-1])
    with pytest.raises(FormatError):
        decode_pointcloud(data[:5])
    scan = encode_polar_scan(PolarScan(np.arange(2.0), np.arange(2.0), np.zeros((2, 4), np.float32), 0.1))
    with pytest.raises(FormatError):
        decode_polar_scan(b"TLPC" + scan[4:])
    # angles swapped so they no longer increase
    swapped = bytearray(scan)
    head = len(scan) - 2 * (16 + 16)
    row = 16 + 16
    swapped[head:head + 8], swapped[head + row:head + row + 8] = scan[head + row:head + row + 8], scan[head:head + 8]
    with pytest.raises(FormatError):
        decode_polar_scan(bytes(swapped))


def _graph(n):
    g = PoseGraph()
    rng = np.random.default_rng(n)
    for i in range(n):
        cloud = PointCloud(rng.normal(size=(20, 3)), np.zeros(20), np.tile([0, 0, 1.0], (20, 1)), np.ones(20))
        g.add_vertex(Vertex((0, i), cloud, 10.0 + i))
    for i in range(1, n):
        g.add_edge(Edge((0, i - 1), (0, i), lg.exp_se3(rng.normal(size=6)), np.eye(6) * 0.01 * i, TEMPORAL))
    return g


@pytest.mark.parametrize("n", [0, 1, 10])
def test_graph_round_trip(tmp_path, n):
    g = _graph(n)
    save_graph(tmp_path, g)
    h = load_graph(tmp_path)
    assert list(h.vertices) == list(g.vertices)
    for vid, v in g.vertices.items():
        assert h.vertices[vid].stamp == v.stamp
        assert np.array_equal(h.vertices[vid].submap.positions, v.submap.positions)
    assert len(h.edges) == len(g.edges)
    for a, b in zip(g.edges, h.edges):
        assert (a.from_id, a.to_id, a.kind) == (b.from_id, b.to_id, b.kind)
        assert np.array_equal(a.mean[:3], b.mean[:3]) and np.array_equal(a.covariance, b.covariance)


def test_graph_with_spatial_edge(tmp_path):
    g = _graph(2)
    g.add_vertex(Vertex((1, 0), PointCloud.empty("vertex"), 99.0))
    g.add_edge(Edge((0, 1), (1, 0), np.eye(4), np.eye(6), SPATIAL))
    save_graph(tmp_path, g)
    assert load_graph(tmp_path).spatial_edge((1, 0)).from_id == (0, 1)


def test_bad_graph_index(tmp_path):
    save_graph(tmp_path, _graph(2))
    index = json.loads((tmp_path / "graph.json").read_text())
    index["version"] = 99
    (tmp_path / "graph.json").write_text(json.dumps(index))
    with pytest.raises(FormatError):
        load_graph(tmp_path)
    (tmp_path / "graph.json").write_text("{")
    with pytest.raises(FormatError):
        load_graph(tmp_path)


def test_run_checksums_detect_tampering(tmp_path):
    save_run(tmp_path, _graph(3), {"kind": "teach"})
    assert load_run(tmp_path).meta["kind"] == "teach"
    f = tmp_path / "vertex_0_1.tlpc"
    data = bytearray(f.read_bytes())
    data[-1] ^= 1
    f.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_run(tmp_path)


def test_storage_counts_graph_and_submaps(tmp_path):
    save_graph(tmp_path, _graph(4))
    expected = sum(p.stat().st_size for p in tmp_path.iterdir())
    assert storage_bytes(tmp_path) == expected
    (tmp_path / "notes.txt").write_text("x" * 1000)
    assert storage_bytes(tmp_path) == expected


def test_tables_and_separators(tmp_path):
    write_tsv(tmp_path / "a.csv", ["x", "y"], [[1.5, "s"], [2, "t"]])
    assert (tmp_path / "a.csv").read_text() == "x,y\n1.5,s\n2,t\n"
    write_tsv(tmp_path / "a.tsv", ["x"], [[0.1]])
    assert read_tsv(tmp_path / "a.tsv") == (["x"], [{"x": "0.1"}])
    (tmp_path / "bad.tsv").write_text("a\tb\n1\n")
    with pytest.raises(FormatError):
        read_tsv(tmp_path / "bad.tsv")


def test_trajectory_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(5)
    poses = lg.exp_se3(rng.normal(size=(7, 6)))
    twists = rng.normal(size=(7, 6))
    times = 1000.0 + rng.uniform(size=7)
    write_trajectory(tmp_path / "t.tsv", times, poses, twists)
    t, P, W = read_trajectory(tmp_path / "t.tsv")
    assert np.array_equal(t, times) and np.array_equal(P, poses) and np.array_equal(W, twists)
