"""featnet: simulator for feature-partitioned learning over networked agents."""

from .algorithms import (
    Sampler,
    corollary_rate_bound,
    default_step_size,
    rate_bound,
    run_centralized_saga,
    run_centralized_sgd,
    run_deterministic_baseline,
    run_naive,
    run_pvrd2,
    run_vrd2,
)
from .data import Dataset, load_dataset, make_synthetic, partition_features, shard
from .errors import ConfigError, DivergenceError, FeatnetError, TopologyError
from .estimators import FeatureDistributedClassifier, FeatureDistributedRegressor
from .harness import (
    audit_invariants,
    compute_reference,
    fit_linear_rate,
    load_config,
    run_experiment,
    validate_config,
)
from .model import LogisticLoss, SoftmaxLoss, SquaredLoss, l2_regularizer, make_loss
from .topology import (
    CombinationMatrix,
    build_metropolis_weights,
    build_random_geometric_graph,
    make_graph,
    mixing_rate,
)
from .trace import RunTrace

__version__ = "0.1.0"

__all__ = [
    "CombinationMatrix",
    "ConfigError",
    "Dataset",
    "DivergenceError",
    "FeatnetError",
    "FeatureDistributedClassifier",
    "FeatureDistributedRegressor",
    "LogisticLoss",
    "RunTrace",
    "Sampler",
    "SoftmaxLoss",
    "SquaredLoss",
    "TopologyError",
    "audit_invariants",
    "build_metropolis_weights",
    "build_random_geometric_graph",
    "compute_reference",
    "corollary_rate_bound",
    "default_step_size",
    "fit_linear_rate",
    "l2_regularizer",
    "load_config",
    "load_dataset",
    "make_graph",
    "make_loss",
    "make_synthetic",
    "mixing_rate",
    "partition_features",
    "rate_bound",
    "run_centralized_saga",
    "run_centralized_sgd",
    "run_deterministic_baseline",
    "run_experiment",
    "run_naive",
    "run_pvrd2",
    "run_vrd2",
    "shard",
    "validate_config",
]
