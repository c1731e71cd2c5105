"""CMDP state space, kernels and constrained solvers."""
from .model import (
    DeterministicPolicy,
    JointActions,
    MixedPolicy,
    NomaModel,
    OmaModel,
    SourceActions,
    build_model,
)
from .solve import (
    InfeasibleBudget,
    SolveReport,
    Solution,
    constrained_solve,
    evaluate_policy,
    fixed_power_solve,
    lagrangian_reward,
    mixing_coefficient,
    optimize_rho,
    power_curve,
    stationary_distribution,
    value_iteration,
    write_policy_csv,
)
from .states import InfeasibleCap, SourceState, StateSpace, enumerate_states, next_state

__all__ = [
    "DeterministicPolicy", "JointActions", "MixedPolicy", "NomaModel", "OmaModel",
    "SourceActions", "build_model", "InfeasibleBudget", "SolveReport", "Solution",
    "constrained_solve", "evaluate_policy", "fixed_power_solve", "lagrangian_reward",
    "mixing_coefficient", "optimize_rho", "power_curve", "stationary_distribution",
    "value_iteration", "write_policy_csv", "InfeasibleCap", "SourceState", "StateSpace",
    "enumerate_states", "next_state",
]
