"""Dynamic-graph data model, validation, and adjacency normalization.

Everything downstream (the model, the explainers, the metrics) consumes the
types defined here. All matrices are dense float64 and immutable after
construction; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GraphValidationError",
    "Snapshot",
    "DynamicGraph",
    "NormalizedAdjacency",
    "normalize_adjacency",
    "validate_dynamic_graph",
    "zero_mean_normalize",
]


class GraphValidationError(ValueError):
    """Raised when a snapshot or graph violates a structural invariant."""


def _as_f64(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Snapshot:
    """One timestep: adjacency (N x N) and node features (N x D)."""

    adjacency: np.ndarray
    features: np.ndarray
    timestamp_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _as_f64(self.adjacency))
        object.__setattr__(self, "features", _as_f64(self.features))
        a, x = self.adjacency, self.features
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphValidationError(
                f"adjacency must be square, got shape {a.shape}"
            )
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise GraphValidationError(
                f"features must have {a.shape[0]} rows, got shape {x.shape}"
            )
        bad = np.argwhere(~np.isfinite(a))
        if bad.size:
            i, j = bad[0]
            raise GraphValidationError(f"adjacency non-finite at ({i}, {j})")
        neg = np.argwhere(a < 0)
        if neg.size:
            i, j = neg[0]
            raise GraphValidationError(f"adjacency negative at ({i}, {j})")
        badx = np.argwhere(~np.isfinite(x))
        if badx.size:
            i, j = badx[0]
            raise GraphValidationError(f"features non-finite at ({i}, {j})")
        if self.timestamp_index < 1:
            raise GraphValidationError("timestamp_index must be >= 1")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DynamicGraph:
    """Ordered snapshot sequence with a fixed node set across time."""

    snapshots: tuple[Snapshot, ...]

    def __post_init__(self):
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        if not self.snapshots:
            raise GraphValidationError("a dynamic graph needs at least one snapshot")
        n, d = self.snapshots[0].num_nodes, self.snapshots[0].feature_dim
        for t, snap in enumerate(self.snapshots, start=1):
            if snap.num_nodes != n:
                raise GraphValidationError(
                    f"snapshot t={t} has N={snap.num_nodes}, expected {n}"
                )
            if snap.feature_dim != d:
                raise GraphValidationError(
                    f"snapshot t={t} has D={snap.feature_dim}, expected {d}"
                )

    @property
    def num_steps(self) -> int:
        return len(self.snapshots)

    @property
    def num_nodes(self) -> int:
        return self.snapshots[0].num_nodes

    @property
    def feature_dim(self) -> int:
        return self.snapshots[0].feature_dim


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency with self-loops."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_f64(self.matrix))


def normalize_adjacency(adjacency: np.ndarray) -> NormalizedAdjacency:
    """Self-loop symmetric normalization of a non-negative adjacency.

    With A the input, returns D~^{-1/2} (A + I) D~^{-1/2} where
    D~(i,i) = 1 + sum_j A(i,j).
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphValidationError(f"adjacency must be square, got shape {a.shape}")
    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        i, j = bad[0]
        raise GraphValidationError(f"adjacency non-finite at ({i}, {j})")
    neg = np.argwhere(a < 0)
    if neg.size:
        i, j = neg[0]
        raise GraphValidationError(f"adjacency negative at ({i}, {j})")
    n = a.shape[0]
    a_tilde = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(1.0 + a.sum(axis=1))
    v = d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]
    return NormalizedAdjacency(v)


def validate_dynamic_graph(graph: DynamicGraph) -> DynamicGraph:
    """Re-run every structural invariant; returns the graph unchanged."""
    if not isinstance(graph, DynamicGraph):
        raise GraphValidationError("expected a DynamicGraph")
    # Construction already validates; rebuilding re-checks after any external
    # tampering with the underlying buffers.
    return DynamicGraph(tuple(
        Snapshot(s.adjacency, s.features, s.timestamp_index)
        for s in graph.snapshots
    ))


def zero_mean_normalize(series: list[np.ndarray]) -> list[np.ndarray]:
    """Subtract, per feature dimension, the mean over all nodes and timesteps."""
    if not series:
        raise GraphValidationError("empty feature series")
    mats = [np.asarray(m, dtype=np.float64) for m in series]
    shape = mats[0].shape
    for k, m in enumerate(mats):
        if m.shape != shape:
            raise GraphValidationError(
                f"series element {k} has shape {m.shape}, expected {shape}"
            )
    mean = np.mean(np.stack(mats, axis=0), axis=(0, 1))
    return [m - mean for m in mats]
