"""Desk-scale full-batch Adam trainer for the GCN-GRU model.

Link labels train against cross-entropy on the logit; node targets against
mean squared error. Training is single-threaded and bit-deterministic given
the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, grads_to_vector, params_to_vector, vector_to_params
from .graph import DynamicGraph
from .model import (
    LINK_PREDICTION,
    LinkQuery,
    ModelParams,
    NODE_REGRESSION,
    NodeQuery,
    init_params,
    model_forward,
)

__all__ = ["TrainConfig", "ModelArch", "AdamState", "adam_step", "train",
           "training_loss", "write_loss_csv"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class ModelArch:
    gcn_dims: tuple[int, ...] = (16, 16)
    hidden_size: int = 16
    mlp_hidden: int = 64
    head_kind: str = LINK_PREDICTION
    gcn_activation: str = "relu"
    gcn_final_activation: str = "linear"
    regress_mode: str = "linear"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(vec: np.ndarray, grad: np.ndarray, state: AdamState,
              config: TrainConfig) -> np.ndarray:
    state.t += 1
    state.m = config.beta1 * state.m + (1 - config.beta1) * grad
    state.v = config.beta2 * state.v + (1 - config.beta2) * grad * grad
    m_hat = state.m / (1 - config.beta1 ** state.t)
    v_hat = state.v / (1 - config.beta2 ** state.t)
    return vec - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _check_labels(labels, head_kind: str):
    if not labels:
        raise ValueError("empty label set")
    want = LinkQuery if head_kind == LINK_PREDICTION else NodeQuery
    for q, y in labels:
        if not isinstance(q, want):
            raise ValueError(
                f"label query {q!r} does not match head kind {head_kind!r}")
        if head_kind == LINK_PREDICTION and y not in (0, 1, 0.0, 1.0):
            raise ValueError(f"link label must be 0 or 1, got {y!r}")


def _loss_and_seed(pred: float, y: float, head_kind: str) -> tuple[float, float]:
    if head_kind == LINK_PREDICTION:
        # numerically stable BCE on the logit
        loss = max(pred, 0.0) - pred * y + np.log1p(np.exp(-abs(pred)))
        return float(loss), float(1.0 / (1.0 + np.exp(-pred)) - y)
    err = pred - y
    return float(err * err), float(2.0 * err)


def training_loss(graph: DynamicGraph, labels, params: ModelParams) -> float:
    total = 0.0
    for q, y in labels:
        pred, _ = model_forward(graph, params, q)
        total += _loss_and_seed(pred, y, params.head.head_kind)[0]
    return total / len(labels)


def train(graph: DynamicGraph, labels, config: TrainConfig,
          arch: ModelArch | None = None,
          params0: ModelParams | None = None) -> tuple[ModelParams, list[float]]:
    """Full-batch Adam over all labelled queries. Returns (params, loss history)."""
    if params0 is None:
        arch = arch or ModelArch()
        params0 = init_params(
            feature_dim=graph.feature_dim, gcn_dims=list(arch.gcn_dims),
            hidden_size=arch.hidden_size, head_kind=arch.head_kind,
            seed=config.seed, mlp_hidden=arch.mlp_hidden,
            gcn_activation=arch.gcn_activation,
            gcn_final_activation=arch.gcn_final_activation,
            regress_mode=arch.regress_mode)
    head_kind = params0.head.head_kind
    _check_labels(labels, head_kind)

    params = params0
    vec = params_to_vector(params)
    state = AdamState(m=np.zeros_like(vec), v=np.zeros_like(vec))
    history = []
    for _ in range(config.epochs):
        grad = np.zeros_like(vec)
        epoch_loss = 0.0
        for q, y in labels:
            pred, trace = model_forward(graph, params, q)
            loss, seed = _loss_and_seed(pred, y, head_kind)
            epoch_loss += loss
            bundle = backward(trace, params, seed_grad=seed)
            grad += grads_to_vector(bundle, params)
        grad /= len(labels)
        epoch_loss /= len(labels)
        history.append(epoch_loss)
        vec = adam_step(vec, grad, state, config)
        params = vector_to_params(vec, params)
    return params, history


def write_loss_csv(history: list[float], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(history, start=1):
            fh.write(f"{i},{format(loss, '.17g')}\n")
