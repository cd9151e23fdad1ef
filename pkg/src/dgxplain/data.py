"""Dataset loaders, the planted-cause synthetic generator, and JSON/CSV
serialization for graphs, relevance maps, and evaluation reports.

Two input shapes are supported: temporal edge lists (src, dst, t[, w]) that
are bucketed into snapshots, and node-reading series (a static sensor
adjacency plus a matrix of per-interval readings).
"""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DynamicGraph, GraphValidationError, Snapshot, zero_mean_normalize
from .lrp import RelevanceMap
from .metrics import EvalReport
from .model import LinkQuery, NodeQuery

__all__ = [
    "DataFormatError",
    "SyntheticSpec",
    "load_temporal_edgelist",
    "load_node_series",
    "generate_planted",
    "planted_label",
    "graph_to_json",
    "graph_from_json",
    "relevance_map_to_json",
    "relevance_map_from_json",
    "relevance_map_to_csv",
    "eval_report_to_json",
    "eval_report_to_csv",
]


class DataFormatError(ValueError):
    pass


def bundled_path(name: str) -> Path:
    """Path to one of the miniature sample datasets shipped with the package."""
    p = Path(__file__).parent / "datasets" / name
    if not p.exists():
        raise DataFormatError(f"no bundled dataset named {name!r}")
    return p


def fmt17(x: float) -> str:
    """17 significant digits: enough to round-trip any float64 exactly."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Temporal edge lists

def load_temporal_edgelist(path, snapshot_rule=("count", 4), weighted: bool = False,
                           directed: bool = False) -> DynamicGraph:
    """Bucket a (src, dst, t[, w]) CSV/TSV into snapshots.

    snapshot_rule is ("count", T) for T equal-width time windows or
    ("window", width) for fixed-width windows. Adjacency is binary and
    symmetrized unless weighted/directed is requested. Node features default
    to [normalized degree, 1.0] per snapshot.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        first_line = sample.splitlines()[0] if sample.splitlines() else ""
        delim = "\t" if "\t" in first_line else ","
        reader = csv.reader(fh, delimiter=delim)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                src, dst, t = row[0].strip(), row[1].strip(), float(row[2])
                w = float(row[3]) if len(row) > 3 and row[3].strip() else 1.0
            except (IndexError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: unparsable row {row!r}") from exc
            records.append((src, dst, t, w))
    if not records:
        raise DataFormatError(f"{path}: no edge records")

    vocab = {nid: k for k, nid in enumerate(sorted({r[0] for r in records}
                                                   | {r[1] for r in records}))}
    n = len(vocab)
    times = np.asarray([r[2] for r in records])
    t_min, t_max = times.min(), times.max()

    kind, value = snapshot_rule
    if kind == "count":
        n_steps = int(value)
        if n_steps < 1:
            raise DataFormatError("snapshot count must be >= 1")
        width = (t_max - t_min) / n_steps if t_max > t_min else 1.0
    elif kind == "window":
        width = float(value)
        if width <= 0:
            raise DataFormatError("window width must be > 0")
        n_steps = int(math.floor((t_max - t_min) / width)) + 1
    else:
        raise DataFormatError(f"unknown snapshot rule {kind!r}")

    adjs = [np.zeros((n, n)) for _ in range(n_steps)]
    for src, dst, t, w in records:
        b = min(int((t - t_min) / width), n_steps - 1) if width > 0 else 0
        i, j = vocab[src], vocab[dst]
        if weighted:
            adjs[b][i, j] += w
            if not directed:
                adjs[b][j, i] += w
        else:
            adjs[b][i, j] = 1.0
            if not directed:
                adjs[b][j, i] = 1.0

    snaps = []
    for t_idx, adj in enumerate(adjs, start=1):
        deg = adj.sum(axis=1)
        norm = deg.max() if deg.max() > 0 else 1.0
        feats = np.column_stack([deg / norm, np.ones(n)])
        snaps.append(Snapshot(adj, feats, t_idx))
    return DynamicGraph(tuple(snaps))


def load_node_series(adjacency_path, readings_path) -> DynamicGraph:
    """Static sensor adjacency + per-interval readings, one row per interval.

    Readings are zero-mean normalized over all nodes and intervals.
    """
    try:
        adj = np.loadtxt(adjacency_path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataFormatError(f"cannot read adjacency file: {exc}") from exc
    try:
        readings = np.loadtxt(readings_path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataFormatError(f"cannot read readings file: {exc}") from exc
    if adj.shape[0] != adj.shape[1]:
        raise DataFormatError(f"adjacency must be square, got {adj.shape}")
    if readings.shape[1] != adj.shape[0]:
        raise DataFormatError(
            f"readings have {readings.shape[1]} sensors, adjacency has "
            f"{adj.shape[0]}")
    feats = zero_mean_normalize([readings[t][:, None]
                                 for t in range(readings.shape[0])])
    return DynamicGraph(tuple(
        Snapshot(adj, x, t + 1) for t, x in enumerate(feats)))


# ---------------------------------------------------------------------------
# Planted-cause synthetic benchmark

@dataclass(frozen=True)
class SyntheticSpec:
    n_nodes: int = 12
    feature_dim: int = 2
    n_steps: int = 4
    planted: tuple[int, ...] = (3,)
    causal_step: int = 2          # 1-based timestep carrying the signal
    noise: float = 0.0
    seed: int = 0
    edge_prob: float = 0.35

    def __post_init__(self):
        if not self.planted:
            raise ValueError("planted set must be non-empty")
        if any(not 0 <= p < self.n_nodes for p in self.planted):
            raise ValueError("planted node out of range")
        if not 1 <= self.causal_step <= self.n_steps:
            raise ValueError("causal_step out of range")


def planted_label(features_by_step: list[np.ndarray], spec: SyntheticSpec) -> float:
    """The generator's own label function: mean of the planted nodes'
    features at the causal timestep. Deterministic, noise-free."""
    x = features_by_step[spec.causal_step - 1]
    return float(np.mean([x[p].sum() for p in spec.planted]))


def generate_planted(spec: SyntheticSpec):
    """Build a graph whose label depends only on the planted nodes' features.

    Non-planted features and the label noise both scale with spec.noise, so
    at noise 0 every non-planted feature entry is exactly zero. Returns
    (graph, labels, ground_truth).
    """
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_nodes, spec.feature_dim
    if len(spec.planted) >= n:
        query = spec.planted[0]
    else:
        query = next(i for i in range(n) if i not in spec.planted)

    snaps = []
    feats_by_step = []
    for t in range(1, spec.n_steps + 1):
        upper = rng.random((n, n)) < spec.edge_prob
        adj = np.triu(upper, k=1).astype(np.float64)
        adj = adj + adj.T
        for p in spec.planted:  # keep the signal within one hop of the query
            if p != query:
                adj[p, query] = adj[query, p] = 1.0
        feats = spec.noise * rng.normal(size=(n, d))
        if t == spec.causal_step:
            for p in spec.planted:
                feats[p] = rng.uniform(1.0, 2.0, size=d)
        else:
            feats[list(spec.planted)] = 0.0
        feats_by_step.append(feats)
        snaps.append(Snapshot(adj, feats, t))

    y = planted_label(feats_by_step, spec) + spec.noise * rng.uniform(-1.0, 1.0)
    graph = DynamicGraph(tuple(snaps))
    labels = [(NodeQuery(query), y)]
    truth = {
        "planted": list(spec.planted),
        "causal_step": spec.causal_step,
        "query": query,
        "label": y,
    }
    return graph, labels, truth


# ---------------------------------------------------------------------------
# Serialization: f64 tensors travel as base64 so round trips are bit-exact.

def _encode(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def graph_to_json(graph: DynamicGraph) -> str:
    doc = {
        "format": "dgxplain/dynamic-graph",
        "version": 1,
        "snapshots": [
            {"t": s.timestamp_index,
             "adjacency": _encode(s.adjacency),
             "features": _encode(s.features)}
            for s in graph.snapshots
        ],
    }
    return json.dumps(doc, sort_keys=True)


def graph_from_json(text: str) -> DynamicGraph:
    try:
        doc = json.loads(text)
        if doc.get("format") != "dgxplain/dynamic-graph":
            raise DataFormatError(f"unexpected format tag {doc.get('format')!r}")
        snaps = tuple(
            Snapshot(_decode(s["adjacency"]), _decode(s["features"]), s["t"])
            for s in doc["snapshots"])
    except (KeyError, ValueError, GraphValidationError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"invalid graph JSON: {exc}") from exc
    return DynamicGraph(snaps)


def _query_to_json(q) -> dict:
    if isinstance(q, LinkQuery):
        return {"kind": "link", "u": q.u, "v": q.v}
    return {"kind": "node", "u": q.u}


def _query_from_json(obj) -> LinkQuery | NodeQuery:
    if obj["kind"] == "link":
        return LinkQuery(obj["u"], obj["v"])
    return NodeQuery(obj["u"])


def relevance_map_to_json(rmap: RelevanceMap) -> str:
    doc = {
        "format": "dgxplain/relevance-map",
        "version": 1,
        "method": rmap.method,
        "seed_value": fmt17(rmap.seed_value),
        "bias_absorbed": fmt17(rmap.bias_absorbed),
        "query": _query_to_json(rmap.query),
        "per_feature": [_encode(m) for m in rmap.per_feature],
        "per_node": [_encode(v) for v in rmap.per_node],
    }
    return json.dumps(doc, sort_keys=True)


def relevance_map_from_json(text: str) -> RelevanceMap:
    doc = json.loads(text)
    if doc.get("format") != "dgxplain/relevance-map":
        raise DataFormatError(f"unexpected format tag {doc.get('format')!r}")
    return RelevanceMap(
        per_feature=tuple(_decode(m) for m in doc["per_feature"]),
        per_node=tuple(_decode(v) for v in doc["per_node"]),
        seed_value=float(doc["seed_value"]),
        query=_query_from_json(doc["query"]),
        method=doc["method"],
        bias_absorbed=float(doc["bias_absorbed"]),
    )


def relevance_map_to_csv(rmap: RelevanceMap) -> str:
    lines = ["t,node,score"]
    for t, vec in enumerate(rmap.per_node, start=1):
        for i, s in enumerate(vec):
            lines.append(f"{t},{i},{fmt17(s)}")
    return "\n".join(lines) + "\n"


def eval_report_to_json(report: EvalReport) -> str:
    doc = {
        "format": "dgxplain/eval-report",
        "version": 1,
        "method": report.method,
        "fidelity_curve": [[fmt17(k), fmt17(v)] for k, v in report.fidelity_curve],
        "sparsity_curve": [[fmt17(k), fmt17(v)] for k, v in report.sparsity_curve],
        "stability": fmt17(report.stability),
        "task_metric": report.task_metric,
        "fidelity_mode": report.fidelity_mode,
        "seeds": report.seeds,
        "config": report.config,
    }
    return json.dumps(doc, sort_keys=True)


def eval_report_to_csv(report: EvalReport) -> str:
    lines = ["metric,x,value"]
    for k, v in report.fidelity_curve:
        lines.append(f"fidelity,{fmt17(k)},{fmt17(v)}")
    for k, v in report.sparsity_curve:
        lines.append(f"sparsity,{fmt17(k)},{fmt17(v)}")
    lines.append(f"stability,,{fmt17(report.stability)}")
    if report.task_metric:
        lines.append(f"{report.task_metric['name']},,"
                     f"{fmt17(report.task_metric['value'])}")
    return "\n".join(lines) + "\n"
