"""Gradient-based comparison explainers: sensitivity analysis and
gradient-times-input. Both reuse the analytic backward pass and emit
RelevanceMap-shaped outputs so the evaluation harness treats all methods
uniformly.
"""

from __future__ import annotations

import numpy as np

from .autodiff import backward
from .graph import DynamicGraph
from .lrp import RelevanceMap, aggregate_node_relevance
from .model import LinkQuery, ModelParams, NodeQuery, model_forward

__all__ = ["sensitivity_analysis", "grad_times_input"]


def sensitivity_analysis(graph: DynamicGraph, params: ModelParams,
                         query: LinkQuery | NodeQuery,
                         node_norm: str = "l2") -> RelevanceMap:
    """Saliency as the absolute gradient of the prediction per input entry.

    Per-node scores default to the L2 norm of the gradient rows; "l1" is
    available for like-for-like comparison with the other methods.
    """
    if node_norm not in ("l1", "l2"):
        raise ValueError(f"unknown node norm {node_norm!r}")
    pred, trace = model_forward(graph, params, query)
    bundle = backward(trace, params, seed_grad=1.0)
    per_feature = tuple(np.abs(g) for g in bundle.d_input)
    if node_norm == "l2":
        per_node = tuple(np.sqrt((g * g).sum(axis=1)) for g in bundle.d_input)
    else:
        per_node = tuple(aggregate_node_relevance(m) for m in per_feature)
    return RelevanceMap(per_feature=per_feature, per_node=per_node,
                        seed_value=pred, query=query, method="sa")


def grad_times_input(graph: DynamicGraph, params: ModelParams,
                     query: LinkQuery | NodeQuery) -> RelevanceMap:
    """Signed elementwise product of the input features with the gradient."""
    pred, trace = model_forward(graph, params, query)
    bundle = backward(trace, params, seed_grad=1.0)
    per_feature = tuple(g * snap.features
                        for g, snap in zip(bundle.d_input, graph.snapshots))
    per_node = tuple(aggregate_node_relevance(m) for m in per_feature)
    return RelevanceMap(per_feature=per_feature, per_node=per_node,
                        seed_value=pred, query=query, method="gradinput")
