"""Numerical laboratory for widely degenerate anisotropic variational problems."""

from .errors import (
    ConvergenceError,
    DegenerateInputError,
    DegenLabError,
    NumericalError,
    PreconditionError,
    UnsupportedDimensionError,
)
from .grid import BallTriple, Grid, GridFunction
from .minimizer import ProblemSpec, SolveReport, continuation_solve, energy, energy_gradient, el_residual, solve
from .scalar import Exponents

__version__ = "0.1.0"

__all__ = [
    "BallTriple",
    "ConvergenceError",
    "DegenLabError",
    "DegenerateInputError",
    "Exponents",
    "Grid",
    "GridFunction",
    "NumericalError",
    "PreconditionError",
    "ProblemSpec",
    "SolveReport",
    "UnsupportedDimensionError",
    "continuation_solve",
    "el_residual",
    "energy",
    "energy_gradient",
    "solve",
]
