import numpy as np
import pytest

from dgxplain.autodiff import (
    backward,
    finite_diff_gradient,
    grads_to_vector,
    params_to_vector,
    vector_to_params,
)
from dgxplain.graph import DynamicGraph, Snapshot
from dgxplain.model import (
    GcnParams,
    HeadParams,
    LinkQuery,
    ModelParams,
    NodeQuery,
    model_forward,
)
from conftest import random_graph, small_params


def rel_err(got, want, floor=1e-8):
    return np.max(np.abs(got - want) / (np.abs(want) + floor))


def test_zero_weights_zero_input_gradient(rng):
    g = random_graph(rng, n=4, d=3, t=2)
    params = small_params("node_regression", seed=0)
    zero_vec = np.zeros_like(params_to_vector(params))
    params = vector_to_params(zero_vec, params)
    _, trace = model_forward(g, params, NodeQuery(0))
    bundle = backward(trace, params)
    for d in bundle.d_input:
        np.testing.assert_array_equal(d, np.zeros_like(d))


def test_single_linear_path_analytic(rng):
    # identity adjacency, one linear GCN layer, GRU forced into pass-through
    # is overkill; instead check the pure head path: T=1, N=1 graph.
    g = DynamicGraph((Snapshot(np.zeros((1, 1)), rng.normal(size=(1, 2)), 1),))
    params = small_params("node_regression", seed=2, d=2, h=3,
                          gcn_dims=(3, 3), mlp_hidden=4)
    _, trace = model_forward(g, params, NodeQuery(0))
    an = backward(trace, params)
    fd = finite_diff_gradient(g, params, NodeQuery(0), step=1e-5)
    assert rel_err(an.d_input[0], fd.d_input[0]) < 1e-6


@pytest.mark.parametrize("head_kind,query", [
    ("link_prediction", LinkQuery(0, 2)),
    ("node_regression", NodeQuery(1)),
])
def test_backward_matches_finite_differences(rng, head_kind, query):
    for trial in range(5):
        g = random_graph(rng, n=4, d=3, t=3)
        params = small_params(head_kind, seed=100 + trial)
        _, trace = model_forward(g, params, query)
        an = backward(trace, params)
        fd = finite_diff_gradient(g, params, query, step=1e-5)
        assert rel_err(grads_to_vector(an, params),
                       grads_to_vector(fd, params)) < 1e-4
        for a, b in zip(an.d_input, fd.d_input):
            assert rel_err(a, b) < 1e-4


def test_seed_grad_scales_linearly(rng):
    g = random_graph(rng, n=4, d=3, t=2)
    params = small_params("node_regression", seed=31)
    _, trace = model_forward(g, params, NodeQuery(2))
    b1 = backward(trace, params, seed_grad=1.0)
    b3 = backward(trace, params, seed_grad=3.0)
    for a, b in zip(b1.d_input, b3.d_input):
        np.testing.assert_allclose(3.0 * a, b, atol=1e-14)


def test_gradients_finite_on_bundled_sample(rng):
    from dgxplain.data import bundled_path, load_temporal_edgelist
    g = load_temporal_edgelist(bundled_path("sample_edges.csv"), ("count", 3))
    params = small_params("link_prediction", seed=5, d=2)
    _, trace = model_forward(g, params, LinkQuery(0, 1))
    backward(trace, params).check_finite()


def test_fd_step_zero_rejected(rng):
    g = random_graph(rng, n=3, d=2, t=1)
    params = small_params("node_regression", seed=7, d=2)
    with pytest.raises(ValueError):
        finite_diff_gradient(g, params, NodeQuery(0), step=0.0)


def test_fd_quadratic_toy():
    # sanity-check the central-difference formula itself on f(x) = x^2
    f = lambda x: x * x
    h = 1e-5
    grad = (f(3.0 + h) - f(3.0 - h)) / (2 * h)
    assert abs(grad - 6.0) < 1e-6


def test_trace_params_mismatch_detected(rng):
    g = random_graph(rng, n=4, d=3, t=2)
    params = small_params("node_regression", seed=41, h=3)
    other = small_params("node_regression", seed=41, h=4)
    _, trace = model_forward(g, params, NodeQuery(0))
    with pytest.raises(ValueError):
        backward(trace, other)
