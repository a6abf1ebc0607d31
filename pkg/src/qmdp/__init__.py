"""Value-at-risk minimization for MDPs whose parameters come from a finite scenario set."""
from .exact_solver import SolveResult, brute_force, expected_value_policy, metrics, solve_exact
from .heuristics import initial_solution, mean_value_policy, robust_value_iteration, select_scenarios
from .inventory import InventoryConfig, InventoryScenario, generate_instance
from .mdp_core import (InstanceError, Policy, ScenarioParams, UncertainMdp, evaluate_policy,
                       randomization_counterexample, random_mdp, scenario_costs)
from .milp_export import ModelVariant, Variant, export_model, render_model
from .preprocess import BoundsCache, Fix, compute_bounds, fix_scenarios
from .quantile import var_alpha, var_of_policy

__version__ = "0.1.0"

__all__ = [
    "BoundsCache", "Fix", "InstanceError", "InventoryConfig", "InventoryScenario", "ModelVariant",
    "Policy", "ScenarioParams", "SolveResult", "UncertainMdp", "Variant", "brute_force",
    "compute_bounds", "evaluate_policy", "expected_value_policy", "export_model", "fix_scenarios",
    "generate_instance", "initial_solution", "mean_value_policy", "metrics", "random_mdp",
    "randomization_counterexample", "render_model", "robust_value_iteration", "scenario_costs",
    "select_scenarios", "solve_exact", "var_alpha", "var_of_policy",
]
