"""Hierarchical federated learning with adaptive pruning and bandwidth allocation."""
from .allocator import (
    AllocationInputs,
    AllocationPlan,
    baseline_equal,
    baseline_no_pruning,
    bandwidth_given_lambda,
    min_pruning_ratio,
    objective,
    oracle_allocation,
    solve_allocation,
)
from .bound import BoundParams, bound_value, h1, h2
from .hierarchy import RunConfig, Topology, cloud_aggregate, edge_aggregate, run
from .kernels import BACKEND
from .model import (
    ModelArch,
    ModelWeights,
    PruningMask,
    apply_mask,
    build_mask,
    importance,
    pruned_weight_count,
)
from .trainer import Dataset, Network, TrainConfig, evaluate, local_loss, local_update, sgd_step

__version__ = "0.1.0"
