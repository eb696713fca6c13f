"""Distributed geometric data perturbation with Phi-separation parameter search."""

from .attacks import AttackReport, FastICA, evaluate, ica_attack, io_attack, ni_metric
from .fedml import FedConfig, NumpyMLPClassifier, fed_average, federated_experiment, knn_utility, run_federation, train_local
from .geometry import apply_transform, make_reflection, make_rotation, make_translation, to_homogeneous
from .perturb import (
    DISTPABPerturber,
    GlobalParams,
    PerturbConfig,
    PerturbOutput,
    coordinate,
    node_perturb,
    perturb_centralized,
    randomized_expansion,
)
from .protocol import Coordinator, run_coordinator, run_simulated, run_worker
from .phi import angle_grid, phi_direct, phi_shortcut, search_optimal
from .stats import GlobalStats, PartitionSummary, finalize_global, merge_summaries, reverse_zscore, sample_covariance, summarize, zscore_normalize

__version__ = "0.1.0"
