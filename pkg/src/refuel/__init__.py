"""Paired relative-future-reward regression for multi-turn policy
optimization, on small finite-horizon turn MDPs."""

from .indexing import StateIndex
from .turn_mdp import (
    CoverageReport,
    EnumerationCapExceeded,
    MDPValidationError,
    Trajectory,
    TurnMDP,
    ValueTables,
    compute_values,
    concentrability,
    enumerate_trajectories,
    expected_return,
    load_mdp,
    occupancy,
    save_mdp,
    validate,
)
from .optimizers import (
    RunResult,
    UpdateSolution,
    exact_target_update,
    npg_update,
    optimal_policy,
    pmd_exact,
    pmd_iterate,
    refuel_iterate,
    regression_loss,
    rloo_iterate,
    solve_update_minnorm,
)
from .policy import FeatureMap, LogLinearPolicy, Policy, TabularSoftmaxPolicy, kl_divergence, pair_predictor
from .rollout import (
    Dataset,
    OfflineBuffer,
    PairSample,
    build_offline_buffer,
    collect_dataset,
    collect_pair,
    rollin,
    rollout_from,
)

__all__ = [
    "StateIndex", "CoverageReport", "EnumerationCapExceeded", "MDPValidationError", "Trajectory", "TurnMDP",
    "ValueTables", "compute_values", "concentrability", "enumerate_trajectories", "expected_return", "load_mdp",
    "occupancy", "save_mdp", "validate", "RunResult", "UpdateSolution", "exact_target_update", "npg_update",
    "optimal_policy", "pmd_exact", "pmd_iterate", "refuel_iterate", "regression_loss", "rloo_iterate",
    "solve_update_minnorm", "FeatureMap", "LogLinearPolicy", "Policy", "TabularSoftmaxPolicy", "kl_divergence",
    "pair_predictor", "Dataset", "OfflineBuffer", "PairSample", "build_offline_buffer", "collect_dataset",
    "collect_pair", "rollin", "rollout_from",
]
