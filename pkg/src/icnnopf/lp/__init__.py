from .brute import BruteResult, brute_force_lp
from .ipm import solve
from .model import (
    EQ,
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    LpSolution,
    NumericalError,
)

__all__ = [
    "EQ",
    "GE",
    "INFEASIBLE",
    "ITERATION_LIMIT",
    "LE",
    "OPTIMAL",
    "UNBOUNDED",
    "BruteResult",
    "LinearProgram",
    "LpSolution",
    "NumericalError",
    "brute_force_lp",
    "solve",
]
