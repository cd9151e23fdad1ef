import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dgxplain.graph import DynamicGraph, Snapshot
from dgxplain.model import init_params


def random_graph(rng, n=4, d=3, t=3, edge_prob=0.5):
    snaps = []
    for step in range(1, t + 1):
        upper = np.triu((rng.random((n, n)) < edge_prob).astype(float), k=1)
        snaps.append(Snapshot(upper + upper.T, rng.normal(size=(n, d)), step))
    return DynamicGraph(tuple(snaps))


def small_params(head_kind, seed=0, d=3, h=3, gcn_dims=(3, 3), mlp_hidden=5):
    return init_params(d, list(gcn_dims), h, head_kind, seed=seed,
                       mlp_hidden=mlp_hidden)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
