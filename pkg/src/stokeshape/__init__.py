"""Shape optimization of 2D Stokes flow with a moving lower wall, solved on a fixed unit square."""
from .adjoint import AdjointSolution, solve_adjoint
from .config import ConfigError, ExperimentConfig, load_config, resolve_config
from .control import (AnalyticControl, ControlFunction, ControlGrid, interpolate_control, preset,
                      read_control_csv, write_control_csv)
from .fem import MixedField, SingularSystemError, build_mesh, build_space
from .forms import ProblemData, default_data
from .functional import (FunctionalSpec, FunctionalValue, GradientDensity, eval_directional_derivative,
                         eval_functional, eval_gradient_density, eval_second_derivative)
from .geometry import DegenerateDomainError
from .harness import ConvergenceReport, DegenerateSequenceError, richardson_extrapolate
from .optimizer import OptimizationHistory, OptimizerConfig, backtracking_step, project_gradient, run_optimization
from .sensitivity import SensitivitySolution, solve_second_sensitivity, solve_sensitivity
from .state import StateSolution, estimate_infsup, solve_state

__version__ = "0.1.0"

__all__ = [
    "AdjointSolution", "AnalyticControl", "ConfigError", "ControlFunction", "ControlGrid",
    "ConvergenceReport", "DegenerateDomainError", "DegenerateSequenceError", "ExperimentConfig",
    "FunctionalSpec", "FunctionalValue", "GradientDensity", "MixedField", "OptimizationHistory",
    "OptimizerConfig", "ProblemData", "SensitivitySolution", "SingularSystemError", "StateSolution",
    "backtracking_step", "build_mesh", "build_space", "default_data", "estimate_infsup",
    "eval_directional_derivative", "eval_functional", "eval_gradient_density", "eval_second_derivative",
    "interpolate_control", "load_config", "preset", "project_gradient", "read_control_csv",
    "resolve_config", "richardson_extrapolate", "run_optimization", "solve_adjoint", "solve_second_sensitivity",
    "solve_sensitivity", "solve_state", "write_control_csv",
]
