"""Flexibility network design: exact second-stage oracle, heuristics and PPO / meta-learning agents."""

from .instance import (
    DemandModel,
    FlexNetwork,
    Instance,
    InstanceError,
    SampleSet,
    build_auto_scenario,
    build_fashion_scenario,
    build_random_instance,
    fctp_to_fdp,
    load_instance,
    sample_demand,
    save_instance,
)
from .oracle import EstimatorConfig, estimate_expected_profit, fdp_objective_estimate, lp_upper_bound, solve_profit

__version__ = "0.1.0"

__all__ = [
    "DemandModel",
    "EstimatorConfig",
    "FlexNetwork",
    "Instance",
    "InstanceError",
    "SampleSet",
    "build_auto_scenario",
    "build_fashion_scenario",
    "build_random_instance",
    "estimate_expected_profit",
    "fctp_to_fdp",
    "fdp_objective_estimate",
    "load_instance",
    "lp_upper_bound",
    "sample_demand",
    "save_instance",
    "solve_profit",
]
