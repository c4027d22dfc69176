"""Two-stage distributionally robust linear programs over Wasserstein balls."""
from .conic import ConicProgram, ProgramBuilder, SolverSettings, SolveResult, SolveStatus, solve
from .copositive import (DisutilitySpec, build_full_problem, build_risk_averse, build_wce_upper,
                         delta_refinement, robust_mode, solve_copositive)
from .exact_lp import build_lp, evaluate_fixed_x, regression_value, solve_lp
from .instance_io import dump, dumps, load, loads
from .model import (FirstStageSet, MetricConfig, RecourseData, SupportPolytope, TwoStageProblem,
                    check_complete_recourse, check_sufficiently_expensive, validate)
from .oracles import (SumMaxRecourse, decision_rule_bound, empirical_cvar, exact_wce_summax, grid_wce,
                      recourse_value, saa_cvar)

__version__ = "0.1.0"

__all__ = [
    "ConicProgram", "ProgramBuilder", "SolverSettings", "SolveResult", "SolveStatus", "solve",
    "DisutilitySpec", "build_full_problem", "build_risk_averse", "build_wce_upper", "delta_refinement",
    "robust_mode", "solve_copositive",
    "build_lp", "evaluate_fixed_x", "regression_value", "solve_lp",
    "dump", "dumps", "load", "loads",
    "FirstStageSet", "MetricConfig", "RecourseData", "SupportPolytope", "TwoStageProblem",
    "check_complete_recourse", "check_sufficiently_expensive", "validate",
    "SumMaxRecourse", "decision_rule_bound", "empirical_cvar", "exact_wce_summax", "grid_wce",
    "recourse_value", "saa_cvar",
]
