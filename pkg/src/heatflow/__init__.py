"""Stochastic heat equation with bounded measurable drift and additive
space-time white noise on a periodic grid."""

__version__ = "0.1.0"

from .core import Field, GridSpec, RngStream, dyadic_times, make_grid
from .drift import DriftSpec, HolderFnSpec, InitialCondition, lambda_n, parse_drift, parse_initial_condition
from .kernel import heat_kernel, heat_multiplier, kernel_convolve
from .noise import (
    WhiteNoise,
    coarsen_noise,
    covariance_diff_oracle,
    noise_path,
    sample_white_noise,
    script_v,
    variance_oracle_v,
)
from .solver import (
    NonConvergence,
    SolutionField,
    SolveConfig,
    flow_composition_defect,
    flow_map,
    solve,
    solve_marching,
    solve_picard,
)

__all__ = [
    "Field", "GridSpec", "RngStream", "dyadic_times", "make_grid",
    "DriftSpec", "HolderFnSpec", "InitialCondition", "lambda_n", "parse_drift", "parse_initial_condition",
    "heat_kernel", "heat_multiplier", "kernel_convolve",
    "WhiteNoise", "coarsen_noise", "covariance_diff_oracle", "noise_path", "sample_white_noise", "script_v",
    "variance_oracle_v",
    "NonConvergence", "SolutionField", "SolveConfig", "flow_composition_defect", "flow_map", "solve",
    "solve_marching", "solve_picard",
]
