"""Relevance back-propagation explanations for GCN-GRU dynamic graph models,
with gradient baselines and fidelity/sparsity/stability evaluation."""

__version__ = "0.1.0"

from .graph import (
    DynamicGraph,
    GraphValidationError,
    NormalizedAdjacency,
    Snapshot,
    normalize_adjacency,
    validate_dynamic_graph,
    zero_mean_normalize,
)
from .model import (
    ForwardTrace,
    GcnParams,
    GruParams,
    HeadParams,
    LinkQuery,
    ModelParams,
    NodeQuery,
    gcn_forward,
    gru_cell_forward,
    init_params,
    link_predict,
    load_params,
    model_forward,
    node_regress,
    save_params,
)
from .autodiff import GradientBundle, backward, finite_diff_gradient
from .train import ModelArch, TrainConfig, train
from .lrp import (
    ExplainerConfig,
    RelevanceMap,
    aggregate_node_relevance,
    explain,
    gcn_relevance,
    gru_relevance_step,
    head_relevance,
    lrp_dense_eps,
)
from .baselines import grad_times_input, sensitivity_analysis
from .metrics import (
    EvalConfig,
    EvalReport,
    fidelity,
    sparsity,
    stability,
    sweep,
)
from .data import (
    SyntheticSpec,
    generate_planted,
    load_node_series,
    load_temporal_edgelist,
)
