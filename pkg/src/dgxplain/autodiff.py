"""Manual reverse-mode gradients for the GCN-GRU model and a finite-difference
oracle used by the tests.

The backward pass mirrors the cached ForwardTrace exactly: head MLP, then GRU
steps t = T..1, then the GCN stack of every timestep. Gradients are produced
for every parameter tensor and for every input feature entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DynamicGraph, Snapshot
from .model import (
    ForwardTrace,
    GcnParams,
    GruParams,
    HeadParams,
    LINK_PREDICTION,
    LinkQuery,
    ModelParams,
    NodeQuery,
    _tensor_list,
    model_forward,
)

__all__ = [
    "GradientBundle",
    "backward",
    "finite_diff_gradient",
    "params_to_vector",
    "vector_to_params",
    "grads_to_vector",
]


@dataclass
class GradientBundle:
    """d_params keyed by tensor name (same names as the weight file header);
    d_input holds one N x D matrix per timestep."""

    d_params: dict[str, np.ndarray]
    d_input: list[np.ndarray]

    def check_finite(self):
        for name, g in self.d_params.items():
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in {name}")
        for t, g in enumerate(self.d_input, start=1):
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite input gradient at t={t}")


def _act_grad(pre, out, kind: str):
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "linear":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}")


def backward(trace: ForwardTrace, params: ModelParams,
             seed_grad: float = 1.0) -> GradientBundle:
    """Gradient of seed_grad * prediction w.r.t. all parameters and inputs."""
    gru, head = params.gru, params.head
    h_size = gru.hidden_size
    if trace.gru[0].h.shape[1] != h_size:
        raise ValueError("trace hidden width does not match params")
    if trace.gcn[0].f[0].shape[1] != params.gcn.in_dim:
        raise ValueError("trace feature width does not match params")

    grads = {name: np.zeros_like(t) for name, t in _tensor_list(params)}

    # Head: out = a1 @ w2 + b2, a1 = act(inp @ w1 + b1)
    htr = trace.head
    d_out = float(seed_grad)
    grads["head.w2"] += d_out * htr.a1
    grads["head.b2"] += d_out
    d_a1 = d_out * head.w2
    if head.head_kind != LINK_PREDICTION and head.regress_mode == "softmax":
        d_pre1 = htr.a1 * (d_a1 - float(d_a1 @ htr.a1))
    else:
        d_pre1 = d_a1 * (htr.pre1 > 0)
    grads["head.w1"] += np.outer(htr.input, d_pre1)
    grads["head.b1"] += d_pre1
    d_head_in = head.w1 @ d_pre1

    n_nodes = trace.gru[0].h.shape[0]
    d_h = np.zeros((n_nodes, h_size))
    q = trace.query
    if isinstance(q, LinkQuery):
        d_h[q.u] += d_head_in[:h_size]
        d_h[q.v] += d_head_in[h_size:]
    else:
        d_h[q.u] += d_head_in

    d_x_hat = []  # per t, gradient w.r.t. GCN output
    for tr in reversed(trace.gru):
        d_z = d_h * (tr.n - tr.h_prev)
        d_n = d_h * tr.z
        d_h_prev = d_h * (1.0 - tr.z)

        d_pre_n = d_n * (1.0 - tr.n * tr.n)
        grads["gru.w_in"] += d_pre_n.T @ tr.x_hat
        grads["gru.b_in"] += d_pre_n.sum(axis=0)
        d_r = d_pre_n * tr.hn_aff
        d_hn_aff = d_pre_n * tr.r
        grads["gru.w_hn"] += d_hn_aff.T @ tr.h_prev
        grads["gru.b_hn"] += d_hn_aff.sum(axis=0)
        d_h_prev += d_hn_aff @ gru.w_hn
        d_x = d_pre_n @ gru.w_in

        d_pre_r = d_r * tr.r * (1.0 - tr.r)
        grads["gru.w_ir"] += d_pre_r.T @ tr.x_hat
        grads["gru.b_ir"] += d_pre_r.sum(axis=0)
        grads["gru.w_hr"] += d_pre_r.T @ tr.h_prev
        grads["gru.b_hr"] += d_pre_r.sum(axis=0)
        d_h_prev += d_pre_r @ gru.w_hr
        d_x += d_pre_r @ gru.w_ir

        d_pre_z = d_z * tr.z * (1.0 - tr.z)
        grads["gru.w_iz"] += d_pre_z.T @ tr.x_hat
        grads["gru.b_iz"] += d_pre_z.sum(axis=0)
        grads["gru.w_hz"] += d_pre_z.T @ tr.h_prev
        grads["gru.b_hz"] += d_pre_z.sum(axis=0)
        d_h_prev += d_pre_z @ gru.w_hz
        d_x += d_pre_z @ gru.w_iz

        d_x_hat.append(d_x)
        d_h = d_h_prev
    d_x_hat.reverse()

    m = params.gcn.num_layers
    d_input = []
    for t, gtr in enumerate(trace.gcn):
        v = trace.v[t].matrix
        d_f = d_x_hat[t]
        for l in range(m - 1, -1, -1):
            act = params.gcn_final_activation if l == m - 1 else params.gcn_activation
            d_pre = d_f * _act_grad(gtr.pre[l], gtr.f[l + 1], act)
            w = params.gcn.layer_weights[l]
            grads[f"gcn.w{l}"] += gtr.p[l].T @ d_pre
            d_p = d_pre @ w.T
            d_f = v.T @ d_p
        d_input.append(d_f)

    return GradientBundle(d_params=grads, d_input=d_input)


# ---------------------------------------------------------------------------
# Flat-vector parameter views (used by Adam and the finite-difference oracle).

def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([np.ravel(t) for _, t in _tensor_list(params)])


def grads_to_vector(bundle: GradientBundle, params: ModelParams) -> np.ndarray:
    return np.concatenate([np.ravel(bundle.d_params[name])
                           for name, _ in _tensor_list(params)])


def vector_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    arrays = {}
    off = 0
    for name, t in _tensor_list(template):
        size = t.size
        arrays[name] = vec[off:off + size].reshape(t.shape)
        off += size
    if off != vec.size:
        raise ValueError("vector length does not match parameter count")
    gcn = GcnParams(tuple(arrays[f"gcn.w{l}"]
                          for l in range(template.gcn.num_layers)))
    gru = GruParams(**{n: arrays[f"gru.{n}"]
                       for n in ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                                 "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")})
    head = HeadParams(w1=arrays["head.w1"], b1=arrays["head.b1"],
                      w2=arrays["head.w2"], b2=float(arrays["head.b2"]),
                      head_kind=template.head.head_kind,
                      regress_mode=template.head.regress_mode)
    return ModelParams(gcn=gcn, gru=gru, head=head,
                       gcn_activation=template.gcn_activation,
                       gcn_final_activation=template.gcn_final_activation,
                       metadata=template.metadata)


def _with_features(graph: DynamicGraph, t_idx: int, feats: np.ndarray) -> DynamicGraph:
    snaps = list(graph.snapshots)
    old = snaps[t_idx]
    snaps[t_idx] = Snapshot(old.adjacency, feats, old.timestamp_index)
    return DynamicGraph(tuple(snaps))


def finite_diff_gradient(graph: DynamicGraph, params: ModelParams,
                         query, step: float = 1e-5) -> GradientBundle:
    """Central-difference gradients; O(#coordinates) forward passes.

    Test oracle only; never used on the training path.
    """
    if step <= 0:
        raise ValueError("step must be > 0")

    def eval_at(p, g):
        out, _ = model_forward(g, p, query)
        if not np.isfinite(out):
            raise FloatingPointError("non-finite model output while probing")
        return out

    base_vec = params_to_vector(params)
    d_vec = np.zeros_like(base_vec)
    for i in range(base_vec.size):
        for sign in (+1.0, -1.0):
            v = base_vec.copy()
            v[i] += sign * step
            d_vec[i] += sign * eval_at(vector_to_params(v, params), graph)
    d_vec /= 2.0 * step

    d_params = {}
    off = 0
    for name, t in _tensor_list(params):
        d_params[name] = d_vec[off:off + t.size].reshape(t.shape)
        off += t.size

    d_input = []
    for t_idx, snap in enumerate(graph.snapshots):
        g = np.zeros_like(snap.features)
        for idx in np.ndindex(*snap.features.shape):
            for sign in (+1.0, -1.0):
                feats = snap.features.copy()
                feats[idx] += sign * step
                g[idx] += sign * eval_at(params, _with_features(graph, t_idx, feats))
        d_input.append(g / (2.0 * step))

    return GradientBundle(d_params=d_params, d_input=d_input)
