"""On-disk formats: point clouds (TLPC), polar scans (TLPS), pose graphs and run directories.

All binary formats are little-endian and start with a 4-byte magic and a
u32 version. Reals are float64 except radar power bins (float32).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .pointcloud import PointCloud
from .posegraph import Edge, PoseGraph, Vertex
from .radar import PolarScan

TLPC_MAGIC = b"TLPC"
TLPS_MAGIC = b"TLPS"
TLPC_VERSION = 1
TLPS_VERSION = 1
GRAPH_VERSION = 1
RUN_VERSION = 1

_TLPC_HEADER = struct.Struct("<4sIQI")
_TLPS_HEADER = struct.Struct("<4sIIId")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def encode_pointcloud(cloud: PointCloud) -> bytes:
    flags = 1 if cloud.has_normals else 0
    cols = [cloud.positions, cloud.times[:, None]]
    if flags:
        cols += [cloud.normals, cloud.scores[:, None]]
    body = np.concatenate(cols, axis=1).astype("<f8")
    return _TLPC_HEADER.pack(TLPC_MAGIC, TLPC_VERSION, len(cloud), flags) + body.tobytes()


def decode_pointcloud(data: bytes, frame_id: str = "sensor") -> PointCloud:
    if len(data) < _TLPC_HEADER.size:
        raise FormatError("point cloud file truncated (header)")
    magic, version, count, flags = _TLPC_HEADER.unpack_from(data)
    if magic != TLPC_MAGIC:
        raise FormatError(f"bad point cloud magic {magic!r}")
    if version != TLPC_VERSION:
        raise FormatError(f"unsupported point cloud version {version}")
    width = 8 if flags & 1 else 4
    expected = _TLPC_HEADER.size + count * width * 8
    if len(data) != expected:
        raise FormatError(f"point cloud file has {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f8", offset=_TLPC_HEADER.size).reshape(count, width).astype(float)
    try:
        if flags & 1:
            return PointCloud(body[:, :3], body[:, 3], body[:, 4:7], body[:, 7], frame_id)
        return PointCloud(body[:, :3], body[:, 3], frame_id=frame_id)
    except ValueError as exc:
        raise FormatError(f"invalid point cloud contents: {exc}") from exc


def write_pointcloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_pointcloud(cloud))


def read_pointcloud(path, frame_id: str = "sensor") -> PointCloud:
    return decode_pointcloud(_read_bytes(path), frame_id)


def _tlps_dtype(n_bins: int) -> np.dtype:
    return np.dtype([("angle", "<f8"), ("timestamp", "<f8"), ("power", "<f4", (n_bins,))])


def encode_polar_scan(scan: PolarScan) -> bytes:
    n_az, n_bins = scan.power.shape
    rows = np.zeros(n_az, dtype=_tlps_dtype(n_bins))
    rows["angle"] = scan.angles
    rows["timestamp"] = scan.timestamps
    rows["power"] = scan.power
    header = _TLPS_HEADER.pack(TLPS_MAGIC, TLPS_VERSION, n_az, n_bins, scan.range_resolution)
    return header + rows.tobytes()


def decode_polar_scan(data: bytes) -> PolarScan:
    if len(data) < _TLPS_HEADER.size:
        raise FormatError("polar scan file truncated (header)")
    magic, version, n_az, n_bins, res = _TLPS_HEADER.unpack_from(data)
    if magic != TLPS_MAGIC:
        raise FormatError(f"bad polar scan magic {magic!r}")
    if version != TLPS_VERSION:
        raise FormatError(f"unsupported polar scan version {version}")
    dtype = _tlps_dtype(n_bins)
    expected = _TLPS_HEADER.size + n_az * dtype.itemsize
    if len(data) != expected:
        raise FormatError(f"polar scan file has {len(data)} bytes, expected {expected}")
    rows = np.frombuffer(data, dtype=dtype, offset=_TLPS_HEADER.size, count=n_az)
    try:
        return PolarScan(
            rows["angle"].astype(float), rows["timestamp"].astype(float), rows["power"].astype(np.float32), res
        )
    except ValueError as exc:
        raise FormatError(f"invalid polar scan contents: {exc}") from exc


def write_polar_scan(path, scan: PolarScan) -> None:
    Path(path).write_bytes(encode_polar_scan(scan))


def read_polar_scan(path) -> PolarScan:
    return decode_polar_scan(_read_bytes(path))


# --- pose graphs -------------------------------------------------------------


def _transform_to_list(T: np.ndarray) -> list:
    return [float(v) for v in np.asarray(T)[:3, :].ravel()]


def _transform_from_list(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (12,):
        raise FormatError("transform needs 12 reals")
    T = np.eye(4)
    T[:3, :] = values.reshape(3, 4)
    return T


def vertex_filename(vid) -> str:
    return f"vertex_{vid[0]}_{vid[1]}.tlpc"


def graph_to_json(graph: PoseGraph, vertex_ids=None, edges=None) -> dict:
    vertex_ids = list(graph.vertices) if vertex_ids is None else list(vertex_ids)
    edges = graph.edges if edges is None else edges
    return {
        "format": "topoloc-graph",
        "version": GRAPH_VERSION,
        "vertices": [
            {
                "run": v[0],
                "index": v[1],
                "stamp": graph.vertices[v].stamp,
                "submap": vertex_filename(v),
            }
            for v in vertex_ids
        ],
        "edges": [
            {
                "from": list(e.from_id),
                "to": list(e.to_id),
                "kind": e.kind,
                "mean": _transform_to_list(e.mean),
                "covariance": [float(c) for c in e.covariance.ravel()],
            }
            for e in edges
        ],
    }


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_graph(directory, graph: PoseGraph, vertex_ids=None, edges=None) -> list:
    """Write ``graph.json`` and one submap file per vertex; returns file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = graph_to_json(graph, vertex_ids, edges)
    names = ["graph.json"]
    (directory / "graph.json").write_bytes(_dump_json(index))
    for v in index["vertices"]:
        vid = (v["run"], v["index"])
        write_pointcloud(directory / v["submap"], graph.vertices[vid].submap)
        names.append(v["submap"])
    return names


def load_graph(directory, graph: PoseGraph | None = None) -> PoseGraph:
    directory = Path(directory)
    try:
        index = json.loads(_read_bytes(directory / "graph.json"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"graph.json is not valid JSON: {exc}") from exc
    if index.get("format") != "topoloc-graph":
        raise FormatError("graph.json has the wrong format tag")
    if index.get("version") != GRAPH_VERSION:
        raise FormatError(f"unsupported graph version {index.get('version')}")
    graph = PoseGraph() if graph is None else graph
    try:
        for v in index["vertices"]:
            vid = (int(v["run"]), int(v["index"]))
            submap = read_pointcloud(directory / v["submap"], frame_id="vertex")
            graph.add_vertex(Vertex(vid, submap, float(v["stamp"])))
        for e in index["edges"]:
            cov = np.asarray(e["covariance"], dtype=float)
            if cov.shape != (36,):
                raise FormatError("edge covariance needs 36 reals")
            graph.edges.append(
                Edge(tuple(e["from"]), tuple(e["to"]), _transform_from_list(e["mean"]), cov.reshape(6, 6), e["kind"])
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed graph.json: {exc}") from exc
    return graph


# --- run directories ---------------------------------------------------------


@dataclass
class RunData:
    graph: PoseGraph
    meta: dict = field(default_factory=dict)


def write_meta(directory, meta: dict, files) -> None:
    """``meta.json`` with format versions and a checksum of every listed file."""
    directory = Path(directory)
    out = dict(meta)
    out["formats"] = {"run": RUN_VERSION, "graph": GRAPH_VERSION, "tlpc": TLPC_VERSION, "tlps": TLPS_VERSION}
    out["checksums"] = {name: sha256_file(directory / name) for name in sorted(files)}
    (directory / "meta.json").write_bytes(_dump_json(out))


def read_meta(directory, verify: bool = True) -> dict:
    directory = Path(directory)
    try:
        meta = json.loads(_read_bytes(directory / "meta.json"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"meta.json is not valid JSON: {exc}") from exc
    formats = meta.get("formats", {})
    if formats.get("run") != RUN_VERSION:
        raise FormatError(f"unsupported run directory version {formats.get('run')}")
    if verify:
        for name, digest in meta.get("checksums", {}).items():
            path = directory / name
            if not path.exists():
                raise FormatError(f"run file {name} is missing")
            if sha256_file(path) != digest:
                raise FormatError(f"checksum mismatch for {name}")
    return meta


def save_run(directory, graph: PoseGraph, meta: dict, extra_files=(), vertex_ids=None, edges=None) -> None:
    """Persist a graph plus metadata; ``extra_files`` already written in ``directory`` get checksummed."""
    names = save_graph(directory, graph, vertex_ids, edges)
    write_meta(directory, meta, list(names) + list(extra_files))


def load_run(directory, graph: PoseGraph | None = None) -> RunData:
    meta = read_meta(directory)
    return RunData(load_graph(directory, graph), meta)


def storage_bytes(directory) -> int:
    """Bytes of the persisted map: graph index plus vertex submaps."""
    directory = Path(directory)
    files = [directory / "graph.json"] + sorted(directory.glob("vertex_*.tlpc"))
    return sum(f.stat().st_size for f in files if f.exists())


# --- tables ------------------------------------------------------------------


def format_real(x: float) -> str:
    return repr(float(x))


def _separator(path) -> str:
    return "," if str(path).endswith(".csv") else "\t"


def write_tsv(path, header, rows) -> None:
    """Text table; ``.csv`` files are comma separated, everything else tab separated."""
    sep = _separator(path)
    lines = [sep.join(header)]
    for row in rows:
        lines.append(sep.join(v if isinstance(v, str) else format_real(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tsv(path):
    text = _read_bytes(path).decode()
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise FormatError(f"{path} is empty")
    sep = _separator(path)
    header = lines[0].split(sep)
    rows = []
    for ln in lines[1:]:
        parts = ln.split(sep)
        if len(parts) != len(header):
            raise FormatError(f"{path}: row has {len(parts)} fields, expected {len(header)}")
        rows.append(dict(zip(header, parts)))
    return header, rows


POSE_COLUMNS = [f"T{i}{j}" for i in range(3) for j in range(4)]
TWIST_COLUMNS = ["v1", "v2", "v3", "w1", "w2", "w3"]


def write_trajectory(path, times, poses, twists=None) -> None:
    """Trajectory table: time, 12 pose reals (top three rows), optional 6 twist reals."""
    header = ["time"] + POSE_COLUMNS + (TWIST_COLUMNS if twists is not None else [])
    rows = []
    for i, t in enumerate(times):
        row = [float(t)] + _transform_to_list(poses[i])
        if twists is not None:
            row += [float(v) for v in twists[i]]
        rows.append(row)
    write_tsv(path, header, rows)


def read_trajectory(path):
    header, rows = read_tsv(path)
    try:
        times = np.array([float(r["time"]) for r in rows])
        poses = np.array([_transform_from_list([float(r[c]) for c in POSE_COLUMNS]) for r in rows]).reshape(-1, 4, 4)
        twists = None
        if all(c in header for c in TWIST_COLUMNS):
            twists = np.array([[float(r[c]) for c in TWIST_COLUMNS] for r in rows]).reshape(-1, 6)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed trajectory table {path}: {exc}") from exc
    return times, poses, twists


def transform_to_list(T) -> list:
    return _transform_to_list(T)


def transform_from_list(values) -> np.ndarray:
    return _transform_from_list(values)
