"""popgcn: population-graph spectral GCN toolkit.

Build a population graph from imaging feature vectors and phenotypic
measures, classify its nodes semi-supervised with Chebyshev-filter graph
convolutions, and evaluate with a grouped stratified cross-validation
harness. See README.md for the CLI and file formats.
"""

from .dataset import (
    UNKNOWN_LABEL,
    AcquisitionRecord,
    FeatureMatrix,
    SyntheticConfig,
    fisher_transform,
    generate_synthetic,
    load_dataset,
    load_features,
    load_phenotypes,
    vectorize_connectivity,
)
from .popgraph import (
    GraphSpec,
    PopulationGraph,
    build_complete_graph,
    build_graph,
    build_knn_graph,
    build_phenotypic_graph,
    build_random_graph,
    gamma_categorical,
    gamma_quantitative,
    longitudinal_sim,
    similarity_kernel,
)
from .spectral import (
    ChebyshevBasis,
    LaplacianMatrix,
    chebyshev_basis,
    estimate_lambda_max,
    normalized_laplacian,
    scale_laplacian,
    spectral_filter_oracle,
)
from .gcn import GcnConfig, GcnModel, predict, train
from .featsel import FeatureSelector, SelectorConfig
from .baselines import BaselineConfig, mlp_classify, ridge_classify
from .harness import (
    ExperimentDescriptor,
    ExperimentReport,
    compute_metrics,
    ensemble_seeds,
    run_experiment,
    stratified_group_kfold,
)

__version__ = "0.1.0"
