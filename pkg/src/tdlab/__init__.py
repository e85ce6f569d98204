"""Fixed-point iteration analysis for linear TD and target-network style objectives."""

from .analysis import (CounterExampleParams, classify, control_lipschitz_check,
                       counterexample_build, counterexample_d1_threshold,
                       counterexample_gamma_threshold, safe_distribution_search, sigma_k,
                       verify_contraction)
from .linear import FeatureMap, build_system, predict_convergence, spectral_radius
from .mrp import Mrp, stationary_distribution, true_values
from .objectives import (ControlProblem, ForceConstants, control_quadratic, estimate_constants,
                         huber_linear, logistic_linear, quadratic_linear, ridge_regularized)
from .solvers import SolverConfig, Trajectory, solve_exact, solve_gradient

__version__ = "0.1.0"
