"""Finite-difference laboratory for blowup in u_t = Lap(u) + V(x) f(u)."""

from ._kernels import BACKEND
from .problem import (
    Boundary,
    Domain,
    Expression,
    Interval,
    Nonlinearity,
    Potential,
    ProblemSpec,
    RadialAnnulus,
    RadialBall,
    critical_exponents,
    make_problem,
    nonlinearity_eval,
    validate_hypotheses,
)
from .solver import SolverConfig, SolutionState, Trajectory, run_to_blowup

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Boundary",
    "Domain",
    "Expression",
    "Interval",
    "Nonlinearity",
    "Potential",
    "ProblemSpec",
    "RadialAnnulus",
    "RadialBall",
    "SolverConfig",
    "SolutionState",
    "Trajectory",
    "critical_exponents",
    "make_problem",
    "nonlinearity_eval",
    "run_to_blowup",
    "validate_hypotheses",
]
