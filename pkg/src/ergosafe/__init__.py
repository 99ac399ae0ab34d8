"""Safety-critical ergodic trajectory optimization.

Plans exploratory trajectories whose time-averaged visits match a target
density over a rectangular workspace, while discrete control barrier
functions keep every step clear of obstacles and of other robots.
"""

from .core import Dynamics, Trajectory, Workspace, rollout, single_integrator
from .ergodic import ErgodicObjective, metric, metric_gradient
from .harness import TrackerConfig, run_gamma_ablation, run_monte_carlo, track
from .multirobot import FleetSpec, solve_fleet, stack
from .optimizer import ProblemSpec, Solution, SolverConfig, SpecError, grad_check, solve
from .safety import DcbfConstraint, PairwiseBarrier, Superellipsoid, audit_trajectory
from .scenario import Scenario, load_scenario
from .spectral import FourierBasis, SpatialMeasure, measure_coefficients

__version__ = "0.1.0"

__all__ = [
    "DcbfConstraint",
    "Dynamics",
    "ErgodicObjective",
    "FleetSpec",
    "FourierBasis",
    "PairwiseBarrier",
    "ProblemSpec",
    "Scenario",
    "Solution",
    "SolverConfig",
    "SpatialMeasure",
    "SpecError",
    "Superellipsoid",
    "TrackerConfig",
    "Trajectory",
    "Workspace",
    "audit_trajectory",
    "grad_check",
    "load_scenario",
    "measure_coefficients",
    "metric",
    "metric_gradient",
    "rollout",
    "run_gamma_ablation",
    "run_monte_carlo",
    "single_integrator",
    "solve",
    "solve_fleet",
    "stack",
    "track",
]
