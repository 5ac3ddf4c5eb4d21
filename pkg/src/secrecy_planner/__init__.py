"""Secrecy-rate planning for a multi-antenna UAV transmitter over Rician channels.

Closed-form rate expressions (a lower bound on the destination rate and the
harmonic-mean-based eavesdropper rate), their analytic derivatives, a
successive-convex power optimizer alternated with a trust-region location
step, and Monte Carlo tools for validating all of it.
"""

from .cli_io import TOOL_VERSION, load_scenario, load_scenario_bundle
from .errors import (
    CoincidentNodes,
    DomainError,
    GridTooLarge,
    InfeasibleAnchor,
    NonConvergence,
    ParseError,
    ScenarioError,
    SecrecyPlannerError,
    SingularToTolerance,
)
from .geometry import AntennaArray, LinkParams, NodeSpec, RadioParams, Scenario, all_links, link_params
from .gradients import gradcheck_suite, grad_location, grad_RL_psi, grad_RU_psi
from .montecarlo import MCConfig, mc_instant_secrecy_ecdf, mc_rate_hmi, mc_rate_true
from .optimizer import OptimizerConfig, algorithm1_power, algorithm2_alternating, grid_search, waterfilling_init
from .rates import PowerAllocation, rate_eav_hmi, rate_legit_lower, secrecy_objective

__version__ = TOOL_VERSION

__all__ = [
    "AntennaArray",
    "CoincidentNodes",
    "DomainError",
    "GridTooLarge",
    "InfeasibleAnchor",
    "LinkParams",
    "MCConfig",
    "NodeSpec",
    "NonConvergence",
    "OptimizerConfig",
    "ParseError",
    "PowerAllocation",
    "RadioParams",
    "Scenario",
    "ScenarioError",
    "SecrecyPlannerError",
    "SingularToTolerance",
    "algorithm1_power",
    "algorithm2_alternating",
    "all_links",
    "grad_RL_psi",
    "grad_RU_psi",
    "grad_location",
    "gradcheck_suite",
    "grid_search",
    "link_params",
    "load_scenario",
    "load_scenario_bundle",
    "mc_instant_secrecy_ecdf",
    "mc_rate_hmi",
    "mc_rate_true",
    "rate_eav_hmi",
    "rate_legit_lower",
    "secrecy_objective",
    "waterfilling_init",
]
