"""Block simplicial complex networks: higher-order link prediction and
an epidemic-control harness built on it."""

from .complex_core import (
    ComplexError,
    Graph,
    SignedIncidence,
    SimplicialComplex,
    build_complex,
    load_edge_list,
    load_features,
    sample_edges,
    save_edge_list,
    save_features,
)
from .hodge_operators import (
    OperatorError,
    OperatorMatrix,
    Projector,
    SchurReport,
    block_hodge,
    check_psd_schur,
    hodge_k,
    normalized_graph_operator,
    power_operator,
    projector_top,
)
from .model import (
    VARIANTS,
    BscnetsModel,
    ModelConfig,
    ModelError,
    assemble_ahlb,
    load_checkpoint,
    save_checkpoint,
)
from .graph_features import (
    betweenness_centrality,
    centrality_features,
    degree_centrality,
    harmonic_closeness,
    pagerank,
    standardize_columns,
)
from .training import (
    LEARNING_RATE_GRID,
    EdgeSplit,
    TrainConfig,
    TrainingError,
    TrainResult,
    roc_auc,
    run_experiment,
    sample_negatives,
    split_edges,
    t_test_one_sided,
    train,
)
from .bundle import BundleError, Dataset, load_bundle, maybe_sparsify, save_bundle
from .synthetic import (
    GENERATORS,
    citation_like,
    contact_graph,
    disease_tree,
    meetings_like,
)
from .epidemic import (
    MITIGATION_STRATEGIES,
    EpidemicError,
    SeirConfig,
    apply_mitigation,
    compare_curves,
    infected_fraction,
    load_curve,
    load_scores,
    perturb_edges,
    reconstruct_network,
    run_epidemic_pipeline,
    save_curve,
    save_scores,
    select_central_nodes,
    simulate_seir,
    trial_seeds,
)

__version__ = "0.1.0"
