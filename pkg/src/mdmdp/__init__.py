"""Revenue-maximizing Bayesian auctions from (approximate) welfare oracles."""

from .decompose import DecompositionFailure, convex_decompose, run_mechanism, simulate
from .ellipsoid import Hyperplane, ellipsoid_feasible, lp_solve
from .estimator import RevenueMaximizer
from .model import Instance, Mechanism, PriceRule, ReducedForm, load_instance, make_instance, validate_instance
from .oracles import border_feasible, brute_force_opt, verify_bic_regret
from .reduced_form import EmpiricalPrior, reduced_form_of, virtual_transform
from .revenue import SolverConfig, SolveReport, solve
from .sampling import build_dprime
from .welfare import WelfareOracle, exact_matching, exact_single_item, greedy_matching, oracle_from_spec
from .wso import WsoConfig, wso_query

__all__ = [
    "DecompositionFailure", "EmpiricalPrior", "Hyperplane", "Instance", "Mechanism", "PriceRule",
    "ReducedForm", "RevenueMaximizer", "SolveReport", "SolverConfig", "WelfareOracle", "WsoConfig",
    "border_feasible", "brute_force_opt", "build_dprime", "convex_decompose", "ellipsoid_feasible",
    "exact_matching", "exact_single_item", "greedy_matching", "load_instance", "lp_solve",
    "make_instance", "oracle_from_spec", "reduced_form_of", "run_mechanism", "simulate", "solve",
    "validate_instance", "verify_bic_regret", "virtual_transform", "wso_query",
]
