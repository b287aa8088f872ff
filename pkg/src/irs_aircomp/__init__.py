"""IRS-assisted multi-cluster over-the-air computation: channel synthesis,
computation-rate evaluation, and sum-rate maximization solvers."""

from .adaptive import (PenaltyState, UpperBound, extract_pattern, penalty_subproblem,
                       solve_adaptive_decomposed, solve_cluster_adaptive,
                       solve_upper_bound, spectral_majorizer)
from .baselines import baseline_no_irs, baseline_random, oracle_grid_search
from .channels import (BeamPattern, ChannelSet, LiftedPattern, MinGain, composite_gain,
                       lift_channel, lifted_cluster, min_gain, path_loss_linear,
                       synthesize_channels)
from .config import Geometry, SystemConfig, dbm_to_watts
from .dynamic import (DynamicState, bilinear_minorant, dynamic_state_from_solution,
                      dynamic_subproblem, extract_association, project_unit_modulus,
                      quadratic_form_minorant, solve_dynamic, solve_low_complexity)
from .rates import (Allocation, Solution, TransceiverSetting, computation_rate,
                    effective_snr, evaluate_solution, proportional_time_allocation,
                    uniform_forcing, verify_solution, volume_term)
from .sweep import (ResultRow, SweepSpec, reverify_solutions, rows_to_csv, rows_to_json,
                    run_sweep, solution_from_dict, solution_to_dict)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "BeamPattern", "ChannelSet", "DynamicState", "Geometry",
    "LiftedPattern", "MinGain", "PenaltyState", "ResultRow", "Solution",
    "SweepSpec", "SystemConfig", "TransceiverSetting", "UpperBound",
    "baseline_no_irs", "baseline_random", "bilinear_minorant", "composite_gain",
    "computation_rate", "dbm_to_watts", "dynamic_state_from_solution",
    "dynamic_subproblem", "effective_snr", "evaluate_solution",
    "extract_association", "extract_pattern", "lift_channel", "lifted_cluster",
    "min_gain", "oracle_grid_search", "path_loss_linear", "penalty_subproblem",
    "project_unit_modulus", "proportional_time_allocation",
    "quadratic_form_minorant", "reverify_solutions", "rows_to_csv", "rows_to_json",
    "run_sweep", "solution_from_dict", "solution_to_dict",
    "solve_adaptive_decomposed", "solve_cluster_adaptive", "solve_dynamic",
    "solve_low_complexity", "solve_upper_bound", "spectral_majorizer",
    "synthesize_channels", "uniform_forcing", "verify_solution", "volume_term",
]
