"""Planar factor-graph odometry fusing IMU preintegration, wheel speed and GPR distances."""

from .factors import (
    RESIDUAL_DIM, STATE_DIM, STATE_NAMES, Factor, bias_factor, gpr_factor, imu_factor, prior_factor,
    residual, wheel_factor,
)
from .metrics import associate, ate_rmse, overall_weighted, path_length
from .pipeline import (
    FusionConfig, FusionResult, FusionRun, SimConfig, build_graph, dead_reckoning, fuse, load_run,
    metrics_dict, save_run, simulate_run, true_frame_steps, write_trajectory_csv,
)
from .preint import Preintegrated, interval_samples, preintegrate, preintegrate_imu, rot, wrap_angle
from .solver import (
    FactorGraph, SolveResult, SolverConfig, UnderConstrainedError, check_constrained, deficient_variables,
    linearize, optimize, total_cost,
)

__all__ = [
    "RESIDUAL_DIM", "STATE_DIM", "STATE_NAMES", "Factor", "bias_factor", "gpr_factor", "imu_factor",
    "prior_factor", "residual", "wheel_factor", "associate", "ate_rmse", "overall_weighted", "path_length",
    "FusionConfig", "FusionResult", "FusionRun", "SimConfig", "build_graph", "dead_reckoning", "fuse",
    "load_run", "metrics_dict", "save_run", "simulate_run", "true_frame_steps", "write_trajectory_csv",
    "Preintegrated", "interval_samples", "preintegrate", "preintegrate_imu", "rot", "wrap_angle",
    "FactorGraph", "SolveResult", "SolverConfig", "UnderConstrainedError", "check_constrained",
    "deficient_variables", "linearize", "optimize", "total_cost",
]
