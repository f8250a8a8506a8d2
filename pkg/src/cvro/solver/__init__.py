"""LP/MILP machinery: model container, bounded simplex, branch-and-bound."""
from .bnb import Solution, propagate, solve
from .model import EQ, GE, LE, LinearModel
from .simplex import LPResult, solve_lp

__all__ = ["EQ", "GE", "LE", "LinearModel", "LPResult", "Solution", "propagate",
           "solve", "solve_lp"]
