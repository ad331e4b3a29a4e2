"""Numerical laboratory for the small-mass limit of variable-friction Langevin
dynamics and the vanishing-friction limit of a degenerate elliptic problem."""

__version__ = "0.1.0"

from .coeffs import CoefficientSet, DomainGeometry, Grid1D, PhaseGrid, builtin_coefficients
from .errors import (
    AssumptionError,
    CatalogError,
    ConfigError,
    GridError,
    KramersLabError,
    NumericalError,
    SchemeError,
)
from .fields import SolutionField
from .table import ConvergenceTable

__all__ = [
    "AssumptionError",
    "CatalogError",
    "CoefficientSet",
    "ConfigError",
    "ConvergenceTable",
    "DomainGeometry",
    "Grid1D",
    "GridError",
    "KramersLabError",
    "NumericalError",
    "PhaseGrid",
    "SchemeError",
    "SolutionField",
    "builtin_coefficients",
    "__version__",
]
