"""Sampled-data model predictive control without terminal ingredients."""
from .errors import *  # noqa: F401,F403
from .model import (ConstraintSpec, ControlSystem, LinearSystem, StageCost, StageCostEnvelope,
                    build_double_integrator, build_scalar_example, pointwise_min_cost)
from .integrate import GridSpec, Trajectory, propagate, propagate_feedback, rk4_step
from .ocp import OcpProblem, OcpSolution, SolverOptions, solve, value_function
from .mpc import MpcRun, lyapunov_monitor, run_mpc, smallest_horizon
from .certify import Certificate, LqConstants, certify, check_condition, min_horizon_bound, solve_care
from .viability import (ViabilityKernel, distance_to_boundary, double_integrator_kernel,
                        inner_approximation, scale_kernel)

__version__ = "0.1.0"
