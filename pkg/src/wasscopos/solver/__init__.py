"""Interior-point solver for cone programs with free, nonnegative, SOC and PSD blocks."""

from ._cones import NumericalError
from .ipm import independent_rows, solve
from .lp import Basis, LPSolution, optimal_basis, solve_lp
from .problem import (
    Block,
    ConicBuilder,
    ConicProblem,
    ConicSolution,
    Status,
    smat,
    svec,
    svec_len,
)

__all__ = [
    "Basis",
    "Block",
    "ConicBuilder",
    "ConicProblem",
    "ConicSolution",
    "LPSolution",
    "NumericalError",
    "Status",
    "independent_rows",
    "optimal_basis",
    "smat",
    "solve",
    "solve_lp",
    "svec",
    "svec_len",
]
