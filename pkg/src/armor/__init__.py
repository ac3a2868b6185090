"""Optimal-transport-regularized divergences, finite DRO duals and robust training."""
from .dcdiv import DcResult, dc_primal, dc_scan_r
from .dro import DroProblem, DualSolution, Variant, bruteforce_primal, outer_objective, solve_outer
from .fdiv import Alpha, BetaMix, DivergenceSpec, Indicator, KL, d_f, f_eval, f_star, f_star_prime
from .transport import BallCostSpec, LabelCostSpec, SampleCostSpec, ot_cost

__all__ = [
    "Alpha", "BallCostSpec", "BetaMix", "DcResult", "DivergenceSpec", "DroProblem", "DualSolution",
    "Indicator", "KL", "LabelCostSpec", "SampleCostSpec", "Variant", "bruteforce_primal", "d_f",
    "dc_primal", "dc_scan_r", "f_eval", "f_star", "f_star_prime", "ot_cost", "outer_objective",
    "solve_outer",
]
