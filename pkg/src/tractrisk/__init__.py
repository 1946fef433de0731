"""Bayesian Leroux-CAR risk modelling for binary outcomes on areal units.

Typical use::

    graph, centroids = grid_graph(5, 4)
    cohort, truth = simulate_cohort(graph, {...}, 100, RandomStream(0, 0))
    design = assemble_design(cohort)
    samples = fit(ModelSpec("CAR"), McmcConfig(), cohort, design, graph)
"""

from .data import (Cohort, DataError, DesignMatrix, Standardization, assemble_design,
                   load_cohort, simulate_cohort, split_train_validation)
from .geometry import TractGeometry, graph_from_geojson, grid_graph
from .graph import GraphError, TractGraph, build_graph, car_precision, read_edge_csv
from .inference import auc, diagnostics, dic, summarize_coefficients, waic
from .polyagamma import RandomStream, sample_pg, sample_pg1, sample_pg_array
from .rebalance import SmoteConfig, WeightScheme, compute_weights, smote_rebalance
from .risk import cluster_risk_posteriors, kmeans_stratify, neighborhood_risks
from .sampler import McmcConfig, ModelSpec, PosteriorSamples, SamplerError, fit

__version__ = "0.1.0"

__all__ = [
    "Cohort", "DataError", "DesignMatrix", "Standardization", "assemble_design", "load_cohort",
    "simulate_cohort", "split_train_validation",
    "TractGeometry", "graph_from_geojson", "grid_graph",
    "GraphError", "TractGraph", "build_graph", "car_precision", "read_edge_csv",
    "auc", "diagnostics", "dic", "summarize_coefficients", "waic",
    "RandomStream", "sample_pg", "sample_pg1", "sample_pg_array",
    "SmoteConfig", "WeightScheme", "compute_weights", "smote_rebalance",
    "cluster_risk_posteriors", "kmeans_stratify", "neighborhood_risks",
    "McmcConfig", "ModelSpec", "PosteriorSamples", "SamplerError", "fit",
]
