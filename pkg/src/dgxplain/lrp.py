"""Relevance back-propagation explainer for the GCN-GRU model.

The prediction is seeded as relevance at the head output, redistributed
through the head MLP onto the final hidden states, then backward through the
GRU steps t = T..1 and through the GCN stack of every timestep, ending at the
input features. Per-node scores are the row-wise L1 norms of the per-feature
relevance.

Gates (reset/update) modulate the flow but receive no relevance of their own;
the bias share of the candidate state is absorbed and tracked separately so
conservation can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DynamicGraph
from .model import (
    ForwardTrace,
    GcnParams,
    GcnStepTrace,
    GruParams,
    GruStepTrace,
    HeadParams,
    LINK_PREDICTION,
    LinkQuery,
    ModelParams,
    NodeQuery,
    NormalizedAdjacency,
    model_forward,
)

__all__ = [
    "ExplainerConfig",
    "RelevanceMap",
    "GruRelevanceStep",
    "lrp_dense_eps",
    "head_relevance",
    "gru_relevance_step",
    "gcn_relevance",
    "aggregate_node_relevance",
    "explain",
]

LITERAL = "literal"
SIGN_AWARE = "sign_aware"


@dataclass(frozen=True)
class ExplainerConfig:
    epsilon: float = 0.0001
    stabilizer_mode: str = SIGN_AWARE

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.stabilizer_mode not in (LITERAL, SIGN_AWARE):
            raise ValueError(f"unknown stabilizer mode {self.stabilizer_mode!r}")


@dataclass(frozen=True)
class RelevanceMap:
    """Per-timestep feature relevance with per-node L1 aggregates."""

    per_feature: tuple[np.ndarray, ...]
    per_node: tuple[np.ndarray, ...]
    seed_value: float
    query: LinkQuery | NodeQuery
    method: str = "dgx"
    bias_absorbed: float = 0.0

    def total_signed(self) -> float:
        return float(sum(m.sum() for m in self.per_feature))

    def overall_node_scores(self) -> np.ndarray:
        """Per-node importance summed over timesteps."""
        return np.sum(np.stack(self.per_node, axis=0), axis=0)


@dataclass
class GruRelevanceStep:
    R_h_t: np.ndarray
    R_h_prev: np.ndarray
    R_n: np.ndarray
    R_n1: np.ndarray
    R_n2: np.ndarray
    R_bn: np.ndarray
    R_x_hat: np.ndarray


def _stabilize(denom: np.ndarray, epsilon: float, mode: str):
    if mode == LITERAL:
        return denom + epsilon
    return denom + epsilon * np.where(denom >= 0, 1.0, -1.0)


def lrp_dense_eps(activations_in: np.ndarray, weights: np.ndarray,
                  relevance_out: np.ndarray, epsilon: float,
                  mode: str = SIGN_AWARE) -> np.ndarray:
    """Stabilized proportional redistribution across one dense layer.

    weights has shape (n_in, n_out); entry (i, o) connects input i to output
    o. Relevance of output o is split among inputs in proportion to their
    weighted activations w[i,o] * a[i].
    """
    a = np.asarray(activations_in, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    r = np.asarray(relevance_out, dtype=np.float64)
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if w.shape != (a.shape[0], r.shape[0]):
        raise ValueError(
            f"weights shape {w.shape} incompatible with input {a.shape} "
            f"and relevance {r.shape}")
    contrib = w * a[:, None]
    denom = _stabilize(contrib.sum(axis=0), epsilon, mode)
    return contrib @ (r / denom)


def _lrp_affine(a, w, bias, relevance_out, epsilon, mode):
    """Like lrp_dense_eps with the bias included in the denominator; returns
    (relevance_in, bias_absorbed_total)."""
    contrib = w * a[:, None]
    denom = _stabilize(contrib.sum(axis=0) + bias, epsilon, mode)
    share = relevance_out / denom
    return contrib @ share, float(bias @ share)


def head_relevance(trace: ForwardTrace, head: HeadParams,
                   config: ExplainerConfig) -> tuple[np.ndarray, float]:
    """Seed relevance over the final hidden states.

    Applies the stabilized redistribution layer-by-layer through the head
    MLP, seeding the output neuron with the prediction itself. For the link
    head the concatenated input is split back into the two endpoints.

    Returns (N x H seed matrix, bias-absorbed relevance).
    """
    htr = trace.head
    if htr is None:
        raise ValueError("forward trace has no head activations")
    eps, mode = config.epsilon, config.stabilizer_mode

    r_a1, ba2 = _lrp_affine(htr.a1, head.w2[:, None], np.asarray([head.b2]),
                            np.asarray([htr.output]), eps, mode)
    r_in, ba1 = _lrp_affine(htr.input, head.w1, head.b1, r_a1, eps, mode)

    n, h = trace.gru[-1].h.shape
    seed = np.zeros((n, h))
    q = trace.query
    if isinstance(q, LinkQuery):
        seed[q.u] += r_in[:h]
        seed[q.v] += r_in[h:]
    else:
        seed[q.u] += r_in
    return seed, ba1 + ba2


def _check_finite(arr, tag: str):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite relevance in {tag}")


def gru_relevance_step(step_trace: GruStepTrace, params: GruParams,
                       R_h_t: np.ndarray, config: ExplainerConfig) -> GruRelevanceStep:
    """Redistribute one node's hidden-state relevance through one GRU step.

    step_trace must hold 1-D vectors for a single node (as produced by
    gru_cell_forward, or one row of the stacked model trace).
    """
    tr = step_trace
    eps, mode = config.epsilon, config.stabilizer_mode
    r_h = np.asarray(R_h_t, dtype=np.float64)

    denom_h = _stabilize(tr.h, eps, mode)
    r_n = (tr.z * tr.n) / denom_h * r_h
    r_hprev_direct = ((1.0 - tr.z) * tr.h_prev) / denom_h * r_h
    _check_finite(r_n, "update-mix split")

    pre_n = tr.n1 + tr.n2 + tr.b_n
    denom_pre = _stabilize(pre_n, eps, mode)
    r_n1 = tr.n1 / denom_pre * r_n
    r_n2 = tr.n2 / denom_pre * r_n
    r_bn = tr.b_n / denom_pre * r_n
    _check_finite(r_n1, "candidate split")

    r_x_hat = lrp_dense_eps(tr.x_hat, params.w_in.T, r_n1, eps, mode)
    w_rn = tr.r[:, None] * params.w_hn
    r_hprev_from_n = lrp_dense_eps(tr.h_prev, w_rn.T, r_n2, eps, mode)
    _check_finite(r_x_hat, "input redistribution")
    _check_finite(r_hprev_from_n, "hidden redistribution")

    return GruRelevanceStep(
        R_h_t=r_h,
        R_h_prev=r_hprev_direct + r_hprev_from_n,
        R_n=r_n, R_n1=r_n1, R_n2=r_n2, R_bn=r_bn,
        R_x_hat=r_x_hat,
    )


def gcn_relevance(trace: GcnStepTrace, params: GcnParams,
                  v: NormalizedAdjacency, R_out: np.ndarray,
                  config: ExplainerConfig) -> np.ndarray:
    """Relevance through the GCN stack of one snapshot, output to input.

    Each layer redistributes twice: across the layer weights (row-wise per
    node), then across the normalized adjacency (column-wise per feature).
    """
    eps, mode = config.epsilon, config.stabilizer_mode
    m = params.num_layers
    r_f = np.asarray(R_out, dtype=np.float64)
    if r_f.shape != trace.f[m].shape:
        raise ValueError(
            f"relevance shape {r_f.shape} does not match GCN output "
            f"{trace.f[m].shape}")
    vt = v.matrix.T
    for l in range(m - 1, -1, -1):
        w = params.layer_weights[l]
        p, f = trace.p[l], trace.f[l]
        if r_f.shape[1] != w.shape[1]:
            raise ValueError(f"relevance width mismatch at layer {l}")
        # across W: denominators are the pre-activations P W
        denom_w = _stabilize(trace.pre[l], eps, mode)
        r_p = p * ((r_f / denom_w) @ w.T)
        # across V: denominators are P itself (column-wise sums V F)
        denom_v = _stabilize(p, eps, mode)
        r_f = f * (vt @ (r_p / denom_v))
        _check_finite(r_f, f"adjacency redistribution at layer {l}")
    return r_f


def aggregate_node_relevance(per_feature: np.ndarray) -> np.ndarray:
    """Row-wise L1 norm: per-node score from per-feature relevance."""
    m = np.asarray(per_feature, dtype=np.float64)
    if not np.isfinite(m).all():
        raise FloatingPointError("non-finite relevance matrix")
    return np.abs(m).sum(axis=1)


def explain(graph: DynamicGraph, params: ModelParams,
            query: LinkQuery | NodeQuery,
            config: ExplainerConfig | None = None) -> RelevanceMap:
    """Full relevance back-propagation for one prediction query."""
    config = config or ExplainerConfig()
    pred, trace = model_forward(graph, params, query)
    r_h, bias_absorbed = head_relevance(trace, params.head, config)

    n = graph.num_nodes
    per_feature: list[np.ndarray] = [None] * graph.num_steps
    for t in range(graph.num_steps - 1, -1, -1):
        gtr = trace.gru[t]
        r_x_hat = np.zeros_like(gtr.x_hat)
        r_h_prev = np.zeros_like(r_h)
        for j in range(n):
            if not r_h[j].any():
                continue
            node_tr = GruStepTrace(**{k: getattr(gtr, k)[j]
                                      for k in ("x_hat", "h_prev", "r", "z", "n",
                                                "n1", "n2", "b_n", "hn_aff", "h")})
            step = gru_relevance_step(node_tr, params.gru, r_h[j], config)
            r_x_hat[j] = step.R_x_hat
            r_h_prev[j] = step.R_h_prev
            bias_absorbed += float(step.R_bn.sum())
        per_feature[t] = gcn_relevance(trace.gcn[t], params.gcn, trace.v[t],
                                       r_x_hat, config)
        r_h = r_h_prev

    per_node = tuple(aggregate_node_relevance(m) for m in per_feature)
    return RelevanceMap(per_feature=tuple(per_feature), per_node=per_node,
                        seed_value=pred, query=query, method="dgx",
                        bias_absorbed=bias_absorbed)
