"""GCN-GRU forward pass with full activation caching, plus prediction heads.

The model applies a weight-shared GCN to every snapshot, feeds each node's
transformed feature sequence through one shared GRU cell, and reads the
prediction off the final hidden states:

  link prediction:  MLP on [h_T(u); h_T(v)] -> logit -> sigmoid
  node regression:  MLP on h_T(u) -> value

Every intermediate quantity needed by the gradient engine and the relevance
explainer is cached in the ForwardTrace.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import DynamicGraph, NormalizedAdjacency, normalize_adjacency

__all__ = [
    "GcnParams",
    "GruParams",
    "HeadParams",
    "ModelParams",
    "LinkQuery",
    "NodeQuery",
    "GcnStepTrace",
    "GruStepTrace",
    "HeadTrace",
    "ForwardTrace",
    "WeightFormatError",
    "gcn_forward",
    "gru_cell_forward",
    "model_forward",
    "link_predict",
    "node_regress",
    "init_params",
    "save_params",
    "load_params",
]

LINK_PREDICTION = "link_prediction"
NODE_REGRESSION = "node_regression"

_ACTIVATIONS = ("relu", "tanh", "linear")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _apply_activation(x, kind: str):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class GcnParams:
    """Stacked GCN layer weights W^(0)..W^(M-1), shared across timesteps."""

    layer_weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.layer_weights)
        object.__setattr__(self, "layer_weights", ws)
        if not ws:
            raise ValueError("GCN needs at least one layer")
        for a, b in zip(ws, ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.shape} -> {b.shape}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def in_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layer_weights[-1].shape[1]


@dataclass(frozen=True)
class GruParams:
    """One shared GRU cell; input width matches the GCN output."""

    w_ir: np.ndarray
    w_iz: np.ndarray
    w_in: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_in: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray

    def __post_init__(self):
        for name in ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                     "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h = self.w_ir.shape[0]
        for name in ("w_iz", "w_in"):
            if getattr(self, name).shape != self.w_ir.shape:
                raise ValueError(f"{name} shape mismatch")
        for name in ("w_hr", "w_hz", "w_hn"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name} must be ({h}, {h})")
        for name in ("b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} must have length {h}")

    @property
    def hidden_size(self) -> int:
        return self.w_ir.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ir.shape[1]


@dataclass(frozen=True)
class HeadParams:
    """Two-layer MLP head. w1: (in, hidden), w2: (hidden,), scalar output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    head_kind: str = LINK_PREDICTION
    regress_mode: str = "linear"  # or "softmax" over the hidden layer

    def __post_init__(self):
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=np.float64))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=np.float64))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=np.float64))
        object.__setattr__(self, "b2", float(self.b2))
        if self.head_kind not in (LINK_PREDICTION, NODE_REGRESSION):
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if self.regress_mode not in ("linear", "softmax"):
            raise ValueError(f"unknown regress mode {self.regress_mode!r}")
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape != self.b1.shape:
            raise ValueError("head layer shapes do not chain")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]


@dataclass(frozen=True)
class ModelParams:
    gcn: GcnParams
    gru: GruParams
    head: HeadParams
    gcn_activation: str = "relu"
    gcn_final_activation: str = "linear"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gcn_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.gcn_activation!r}")
        if self.gcn_final_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.gcn_final_activation!r}")
        if self.gru.input_size != self.gcn.out_dim:
            raise ValueError("GRU input width must equal GCN output width")


@dataclass(frozen=True)
class LinkQuery:
    u: int
    v: int


@dataclass(frozen=True)
class NodeQuery:
    u: int


@dataclass
class GcnStepTrace:
    """Per-timestep GCN cache: F^(l), P^(l) = V F^(l), pre-activations."""

    f: list  # F^(0)..F^(M), each N x D_l
    p: list  # P^(0)..P^(M-1)
    pre: list  # P^(l) W^(l) before the activation


@dataclass
class GruStepTrace:
    """Per-timestep GRU cache, stacked over nodes (rows)."""

    x_hat: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    n1: np.ndarray       # W_in x_hat
    n2: np.ndarray       # r * (W_hn h_prev)
    b_n: np.ndarray      # b_in + r * b_hn
    hn_aff: np.ndarray   # W_hn h_prev + b_hn
    h: np.ndarray


@dataclass
class HeadTrace:
    input: np.ndarray
    pre1: np.ndarray
    a1: np.ndarray
    output: float
    probability: float | None = None


@dataclass
class ForwardTrace:
    v: list[NormalizedAdjacency]
    gcn: list[GcnStepTrace]
    gru: list[GruStepTrace]
    head: HeadTrace
    query: LinkQuery | NodeQuery
    prediction: float

    @property
    def num_steps(self) -> int:
        return len(self.gcn)


def gcn_forward(v: NormalizedAdjacency, x: np.ndarray, params: GcnParams,
                activation: str = "relu",
                final_activation: str = "linear") -> GcnStepTrace:
    """Stacked graph convolutions F^(l+1) = act(V F^(l) W^(l))."""
    f = np.asarray(x, dtype=np.float64)
    if f.shape[1] != params.in_dim:
        raise ValueError(f"features have width {f.shape[1]}, expected {params.in_dim}")
    fs, ps, pres = [f], [], []
    m = params.num_layers
    for l, w in enumerate(params.layer_weights):
        p = v.matrix @ fs[-1]
        pre = p @ w
        act = final_activation if l == m - 1 else activation
        fs.append(_apply_activation(pre, act))
        ps.append(p)
        pres.append(pre)
    return GcnStepTrace(f=fs, p=ps, pre=pres)


def _gru_step(x_hat: np.ndarray, h_prev: np.ndarray, params: GruParams) -> GruStepTrace:
    """One GRU update, vectorized over nodes (rows of x_hat / h_prev)."""
    if not (np.isfinite(x_hat).all() and np.isfinite(h_prev).all()):
        raise ValueError("non-finite GRU input")
    r = _sigmoid(x_hat @ params.w_ir.T + params.b_ir
                 + h_prev @ params.w_hr.T + params.b_hr)
    z = _sigmoid(x_hat @ params.w_iz.T + params.b_iz
                 + h_prev @ params.w_hz.T + params.b_hz)
    n1 = x_hat @ params.w_in.T
    hn_aff = h_prev @ params.w_hn.T + params.b_hn
    n2 = r * (h_prev @ params.w_hn.T)
    b_n = params.b_in + r * params.b_hn
    n = np.tanh(n1 + params.b_in + r * hn_aff)
    h = (1.0 - z) * h_prev + z * n
    return GruStepTrace(x_hat=x_hat, h_prev=h_prev, r=r, z=z, n=n,
                        n1=n1, n2=n2, b_n=b_n, hn_aff=hn_aff, h=h)


def gru_cell_forward(x_hat: np.ndarray, h_prev: np.ndarray,
                     params: GruParams) -> tuple[np.ndarray, GruStepTrace]:
    """Single-node GRU step on 1-D vectors; returns (h, trace entries)."""
    x = np.asarray(x_hat, dtype=np.float64)[None, :]
    h = np.asarray(h_prev, dtype=np.float64)[None, :]
    tr = _gru_step(x, h, params)
    squeezed = GruStepTrace(**{k: np.squeeze(getattr(tr, k), axis=0)
                               for k in ("x_hat", "h_prev", "r", "z", "n",
                                         "n1", "n2", "b_n", "hn_aff", "h")})
    return squeezed.h, squeezed


def _head_forward(inp: np.ndarray, head: HeadParams) -> HeadTrace:
    pre1 = inp @ head.w1 + head.b1
    if head.head_kind == NODE_REGRESSION and head.regress_mode == "softmax":
        e = np.exp(pre1 - pre1.max())
        a1 = e / e.sum()
    else:
        a1 = np.maximum(pre1, 0.0)
    out = float(a1 @ head.w2 + head.b2)
    prob = float(_sigmoid(out)) if head.head_kind == LINK_PREDICTION else None
    return HeadTrace(input=inp, pre1=pre1, a1=a1, output=out, probability=prob)


def link_predict(h_u: np.ndarray, h_v: np.ndarray,
                 head: HeadParams) -> tuple[float, float]:
    """Link probability from concatenated endpoint embeddings.

    Returns (probability, logit); explainers and the loss are seeded from
    the logit.
    """
    if head.head_kind != LINK_PREDICTION:
        raise ValueError("head is not a link-prediction head")
    tr = _head_forward(np.concatenate([h_u, h_v]), head)
    return tr.probability, tr.output


def node_regress(h_u: np.ndarray, head: HeadParams) -> float:
    if head.head_kind != NODE_REGRESSION:
        raise ValueError("head is not a node-regression head")
    return _head_forward(np.asarray(h_u, dtype=np.float64), head).output


def model_forward(graph: DynamicGraph, params: ModelParams,
                  query: LinkQuery | NodeQuery) -> tuple[float, ForwardTrace]:
    """Full GCN-GRU forward pass with activation caching.

    The returned prediction is the head output before any sigmoid (the link
    logit, or the regression value).
    """
    n = graph.num_nodes
    if isinstance(query, LinkQuery):
        if not (0 <= query.u < n and 0 <= query.v < n):
            raise IndexError(f"query nodes ({query.u}, {query.v}) out of range for N={n}")
        if params.head.head_kind != LINK_PREDICTION:
            raise ValueError("link query requires a link-prediction head")
    elif isinstance(query, NodeQuery):
        if not 0 <= query.u < n:
            raise IndexError(f"query node {query.u} out of range for N={n}")
        if params.head.head_kind != NODE_REGRESSION:
            raise ValueError("node query requires a node-regression head")
    else:
        raise TypeError(f"unsupported query type {type(query).__name__}")

    vs, gcn_traces, gru_traces = [], [], []
    h = np.zeros((n, params.gru.hidden_size))
    for snap in graph.snapshots:
        v = normalize_adjacency(snap.adjacency)
        gtr = gcn_forward(v, snap.features, params.gcn,
                          params.gcn_activation, params.gcn_final_activation)
        rtr = _gru_step(gtr.f[-1], h, params.gru)
        h = rtr.h
        vs.append(v)
        gcn_traces.append(gtr)
        gru_traces.append(rtr)

    if isinstance(query, LinkQuery):
        head_in = np.concatenate([h[query.u], h[query.v]])
    else:
        head_in = h[query.u]
    htr = _head_forward(head_in, params.head)
    trace = ForwardTrace(v=vs, gcn=gcn_traces, gru=gru_traces, head=htr,
                         query=query, prediction=htr.output)
    return htr.output, trace


def init_params(feature_dim: int, gcn_dims: list[int], hidden_size: int,
                head_kind: str, seed: int, mlp_hidden: int = 64,
                gcn_activation: str = "relu",
                gcn_final_activation: str = "linear",
                regress_mode: str = "linear") -> ModelParams:
    """Seeded uniform(-s, s) init with s = 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    dims = [feature_dim] + list(gcn_dims)
    gcn = GcnParams(tuple(u((a, b), a) for a, b in zip(dims, dims[1:])))
    d_in, h = dims[-1], hidden_size
    gru = GruParams(
        w_ir=u((h, d_in), d_in), w_iz=u((h, d_in), d_in), w_in=u((h, d_in), d_in),
        w_hr=u((h, h), h), w_hz=u((h, h), h), w_hn=u((h, h), h),
        b_ir=u(h, h), b_iz=u(h, h), b_in=u(h, h),
        b_hr=u(h, h), b_hz=u(h, h), b_hn=u(h, h),
    )
    head_in = 2 * h if head_kind == LINK_PREDICTION else h
    head = HeadParams(
        w1=u((head_in, mlp_hidden), head_in), b1=u(mlp_hidden, head_in),
        w2=u(mlp_hidden, mlp_hidden), b2=float(u((), mlp_hidden)),
        head_kind=head_kind, regress_mode=regress_mode,
    )
    meta = {"seed": seed, "init": "uniform_fan_in", "h0": "zeros"}
    return ModelParams(gcn=gcn, gru=gru, head=head,
                       gcn_activation=gcn_activation,
                       gcn_final_activation=gcn_final_activation,
                       metadata=meta)


# ---------------------------------------------------------------------------
# Weight persistence: magic "DGXW", u32 version, u32 header length, JSON shape
# header, then raw little-endian f64 payload per tensor in declared order.

_MAGIC = b"DGXW"
_VERSION = 1


class WeightFormatError(ValueError):
    pass


def _tensor_list(params: ModelParams):
    items = [(f"gcn.w{l}", w) for l, w in enumerate(params.gcn.layer_weights)]
    for name in ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                 "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"):
        items.append((f"gru.{name}", getattr(params.gru, name)))
    items += [("head.w1", params.head.w1), ("head.b1", params.head.b1),
              ("head.w2", params.head.w2), ("head.b2", np.asarray(params.head.b2))]
    return items


def save_params(params: ModelParams, path) -> None:
    tensors = _tensor_list(params)
    header = {
        "head_kind": params.head.head_kind,
        "regress_mode": params.head.regress_mode,
        "gcn_activation": params.gcn_activation,
        "gcn_final_activation": params.gcn_final_activation,
        "gcn_layers": params.gcn.num_layers,
        "metadata": params.metadata,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise WeightFormatError("bad magic: not a DGXW weight file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    if len(data) < 12 + hlen:
        raise WeightFormatError("truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise WeightFormatError(f"invalid header JSON: {exc}") from exc
    off = 12 + hlen
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape)) if shape else 8
        if off + nbytes > len(data):
            raise WeightFormatError(f"file truncated inside tensor {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(
            data[off:off + nbytes], dtype="<f8").reshape(shape)
        off += nbytes
    if off != len(data):
        raise WeightFormatError("trailing bytes after declared tensors")

    try:
        m = header["gcn_layers"]
        gcn = GcnParams(tuple(arrays[f"gcn.w{l}"] for l in range(m)))
        gru = GruParams(**{name: arrays[f"gru.{name}"]
                           for name in ("w_ir", "w_iz", "w_in", "w_hr", "w_hz",
                                        "w_hn", "b_ir", "b_iz", "b_in", "b_hr",
                                        "b_hz", "b_hn")})
        head = HeadParams(w1=arrays["head.w1"], b1=arrays["head.b1"],
                          w2=arrays["head.w2"], b2=float(arrays["head.b2"]),
                          head_kind=header["head_kind"],
                          regress_mode=header["regress_mode"])
    except KeyError as exc:
        raise WeightFormatError(f"header missing tensor {exc}") from exc
    return ModelParams(gcn=gcn, gru=gru, head=head,
                       gcn_activation=header["gcn_activation"],
                       gcn_final_activation=header["gcn_final_activation"],
                       metadata=header.get("metadata", {}))
