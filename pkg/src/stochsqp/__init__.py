"""Stochastic SQP for equality-constrained problems with possibly rank-deficient Jacobians."""

from stochsqp._backend import BACKEND
from stochsqp.problems import (
    Dataset,
    GradientOracle,
    LogisticProblem,
    ProblemInstance,
    SyntheticProblem,
    load_dataset,
    make_logistic_problem,
    make_synthetic_degenerate,
    parse_libsvm,
)
from stochsqp.solver import BetaSchedule, RunReport, SolverConfig, estimate_lipschitz, solve

__all__ = [
    "BACKEND",
    "BetaSchedule",
    "Dataset",
    "GradientOracle",
    "LogisticProblem",
    "ProblemInstance",
    "RunReport",
    "SolverConfig",
    "SyntheticProblem",
    "estimate_lipschitz",
    "load_dataset",
    "make_logistic_problem",
    "make_synthetic_degenerate",
    "parse_libsvm",
    "solve",
]

__version__ = "0.1.0"
