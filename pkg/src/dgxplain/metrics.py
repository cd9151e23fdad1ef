"""Evaluation indexes for node explanations: fidelity, sparsity, stability,
plus task metrics (AUC / MAE) and the sweep harness that assembles them into
comparable reports.

All metrics operate on per-node importance scores so any explainer emitting a
RelevanceMap can be evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import DynamicGraph, Snapshot
from .model import (
    LINK_PREDICTION,
    LinkQuery,
    ModelParams,
    NodeQuery,
    model_forward,
)

__all__ = [
    "EvalConfig",
    "EvalReport",
    "sparsity",
    "fidelity",
    "stability",
    "sweep",
    "random_ranking_fidelity",
    "occlude_nodes",
    "auc_score",
    "mean_absolute_error",
]

DEFAULT_KEEP_FRACTIONS = (0.9, 0.8, 0.7, 0.6, 0.5)
DEFAULT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(21))


@dataclass(frozen=True)
class EvalConfig:
    keep_fractions: tuple[float, ...] = DEFAULT_KEEP_FRACTIONS
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    perturb_seeds: tuple[int, ...] = tuple(range(10))
    edge_fraction: float = 0.2
    occlusion: str = "features"      # or "edges"
    stability_distance: str = "l1"   # or "cosine"


@dataclass
class EvalReport:
    method: str
    fidelity_curve: list[tuple[float, float]]
    sparsity_curve: list[tuple[float, float]]
    stability: float
    task_metric: dict | None
    fidelity_mode: str
    seeds: list[int]
    config: dict = field(default_factory=dict)


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi - lo == 0:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def sparsity(per_node: np.ndarray, threshold: float) -> float:
    """Fraction of nodes whose min-max normalized score falls below threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    scores = _minmax(np.asarray(per_node, dtype=np.float64))
    return float(np.count_nonzero(scores < threshold) / scores.size)


def occlude_nodes(graph: DynamicGraph, nodes, mode: str = "features") -> DynamicGraph:
    """Zero the given nodes' feature rows (or drop their edges) at every t."""
    nodes = list(nodes)
    snaps = []
    for snap in graph.snapshots:
        if mode == "features":
            feats = snap.features.copy()
            feats[nodes, :] = 0.0
            snaps.append(Snapshot(snap.adjacency, feats, snap.timestamp_index))
        elif mode == "edges":
            adj = snap.adjacency.copy()
            adj[nodes, :] = 0.0
            adj[:, nodes] = 0.0
            snaps.append(Snapshot(adj, snap.features, snap.timestamp_index))
        else:
            raise ValueError(f"unknown occlusion mode {mode!r}")
    return DynamicGraph(tuple(snaps))


def _query_metric(graph: DynamicGraph, params: ModelParams, query) -> float:
    pred, trace = model_forward(graph, params, query)
    if params.head.head_kind == LINK_PREDICTION:
        return trace.head.probability
    return pred


def _top_nodes(per_node_scores: np.ndarray, keep_fraction: float) -> np.ndarray:
    n = per_node_scores.size
    n_occ = int(math.floor(n * (1.0 - keep_fraction) + 1e-9))
    order = np.argsort(-per_node_scores, kind="stable")
    return order[:n_occ]


def fidelity(graph: DynamicGraph, params: ModelParams, queries,
             per_node_scores: np.ndarray, keep_fraction: float,
             occlusion: str = "features") -> float:
    """Mean absolute prediction change after occluding the top-scored nodes.

    Sorts nodes by score, zeroes the top (1 - keep_fraction) fraction, and
    compares per-query predictions (link probability, or regression value)
    before and after. Higher means the explanation marked influential nodes.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    occluded_nodes = _top_nodes(np.asarray(per_node_scores, dtype=np.float64),
                                keep_fraction)
    if occluded_nodes.size == 0:
        return 0.0
    occluded = occlude_nodes(graph, occluded_nodes, occlusion)
    deltas = [abs(_query_metric(graph, params, q)
                  - _query_metric(occluded, params, q)) for q in queries]
    return float(np.mean(deltas))


def random_ranking_fidelity(graph: DynamicGraph, params: ModelParams, queries,
                            keep_fraction: float, n_samples: int = 50,
                            seed: int = 0, occlusion: str = "features") -> float:
    """Monte Carlo fidelity of uniformly random node rankings."""
    rng = np.random.default_rng(seed)
    n = graph.num_nodes
    out = []
    for _ in range(n_samples):
        scores = rng.permutation(n).astype(np.float64)
        out.append(fidelity(graph, params, queries, scores, keep_fraction,
                            occlusion))
    return float(np.mean(out))


def _undirected_edges(adj: np.ndarray) -> set[tuple[int, int]]:
    rows, cols = np.nonzero(adj)
    return {(int(i), int(j)) for i, j in zip(rows, cols) if i < j}


def perturb_graph(graph: DynamicGraph, seed: int,
                  edge_fraction: float = 0.2) -> DynamicGraph:
    """Add ceil(edge_fraction * |E_t|) new random edges to every snapshot."""
    rng = np.random.default_rng(seed)
    n = graph.num_nodes
    snaps = []
    for snap in graph.snapshots:
        existing = _undirected_edges(snap.adjacency)
        n_new = math.ceil(edge_fraction * len(existing))
        capacity = n * (n - 1) // 2 - len(existing)
        if n_new > capacity:
            raise ValueError(
                f"snapshot t={snap.timestamp_index} has room for only "
                f"{capacity} new edges, need {n_new}")
        adj = snap.adjacency.copy()
        added = 0
        while added < n_new:
            i, j = sorted(rng.integers(0, n, size=2).tolist())
            if i == j or (i, j) in existing:
                continue
            existing.add((i, j))
            adj[i, j] = adj[j, i] = 1.0
            added += 1
        snaps.append(Snapshot(adj, snap.features, snap.timestamp_index))
    return DynamicGraph(tuple(snaps))


def stability(explainer, graph: DynamicGraph, params: ModelParams, query,
              perturb_seed: int, edge_fraction: float = 0.2,
              distance: str = "l1") -> float:
    """Change in per-node scores after randomly densifying every snapshot.

    explainer is a callable (graph, params, query) -> RelevanceMap. Lower is
    better; 0 means the explanation ignored the perturbation.
    """
    base = explainer(graph, params, query)
    perturbed_graph = perturb_graph(graph, perturb_seed, edge_fraction)
    other = explainer(perturbed_graph, params, query)
    dists = []
    for r, rp in zip(base.per_node, other.per_node):
        if distance == "l1":
            dists.append(np.abs(r - rp).sum() / (np.abs(r).sum() + 1e-12))
        elif distance == "cosine":
            num = float(r @ rp)
            den = float(np.linalg.norm(r) * np.linalg.norm(rp))
            dists.append(0.0 if den == 0 and num == 0 else 1.0 - num / (den + 1e-12))
        else:
            raise ValueError(f"unknown distance {distance!r}")
    return float(np.mean(dists))


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC (ties get midranks)."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = np.count_nonzero(labels == 1), np.count_nonzero(labels == 0)
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty_like(scores)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - pos * (pos + 1) / 2) / (pos * neg))


def mean_absolute_error(targets: np.ndarray, preds: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(targets) - np.asarray(preds))))


def task_metric(graph: DynamicGraph, params: ModelParams, labels) -> dict:
    preds, ys = [], []
    for q, y in labels:
        preds.append(_query_metric(graph, params, q))
        ys.append(y)
    if params.head.head_kind == LINK_PREDICTION:
        return {"name": "auc", "value": auc_score(np.asarray(ys), np.asarray(preds))}
    return {"name": "mae", "value": mean_absolute_error(np.asarray(ys),
                                                        np.asarray(preds))}


def sweep(explainers: dict, graph: DynamicGraph, params: ModelParams,
          queries, config: EvalConfig | None = None,
          labels=None) -> dict[str, EvalReport]:
    """Run every metric for every explainer, averaged over queries/seeds."""
    config = config or EvalConfig()
    metric = task_metric(graph, params, labels) if labels else None
    reports = {}
    for name, fn in explainers.items():
        maps = [fn(graph, params, q) for q in queries]
        score_sets = [m.overall_node_scores() for m in maps]

        fid_curve = []
        for keep in config.keep_fractions:
            vals = [fidelity(graph, params, [q], s, keep, config.occlusion)
                    for q, s in zip(queries, score_sets)]
            fid_curve.append((keep, float(np.mean(vals))))

        sp_curve = []
        for thr in config.thresholds:
            vals = [sparsity(s, thr) for s in score_sets]
            sp_curve.append((thr, float(np.mean(vals))))

        stab_vals = [stability(fn, graph, params, q, seed,
                               config.edge_fraction, config.stability_distance)
                     for q in queries for seed in config.perturb_seeds]
        reports[name] = EvalReport(
            method=name,
            fidelity_curve=fid_curve,
            sparsity_curve=sp_curve,
            stability=float(np.mean(stab_vals)),
            task_metric=metric,
            fidelity_mode=f"prediction_delta/{config.occlusion}",
            seeds=list(config.perturb_seeds),
            config={
                "keep_fractions": list(config.keep_fractions),
                "thresholds": list(config.thresholds),
                "edge_fraction": config.edge_fraction,
                "occlusion": config.occlusion,
                "stability_distance": config.stability_distance,
            },
        )
    return reports
