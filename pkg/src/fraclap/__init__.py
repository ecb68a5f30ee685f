"""Finite difference fractional Laplacian on boxes in two and three dimensions.

The discrete operator is assembled once as a symmetric multilevel Toeplitz
matrix and applied with FFTs; see :func:`build_operator`.
"""

__version__ = "0.1.0"

from .errors import (BreakdownNonSPD, BudgetExceeded, CapExceeded, DomainError,
                     FileFormatError, FracLapError, MaxIterWarning, NonIntegrable,
                     NonNestedGrids, PicardNotConverged, ShapeMismatch)
from .singquad import QuadConfig, cell_weight, tail_weight
from .stencil import FracParams, Stencil, build_stencil, norm_const
from .toeplitz import Field, FractionalOperator, GridSpec, assemble_operator
from .krylov import CgConfig, CgResult, LinearMap, cg_solve
from .pde import (AllenCahnConfig, ManufacturedFn, StudyReport, allen_cahn_run,
                  build_operator, manufactured_eval, mass, poisson_solve, poisson_study,
                  truncation_study)
from .estimators import FractionalLaplacian

__all__ = [
    "__version__",
    "FracLapError", "DomainError", "NonIntegrable", "BudgetExceeded", "ShapeMismatch",
    "CapExceeded", "BreakdownNonSPD", "MaxIterWarning", "PicardNotConverged",
    "NonNestedGrids", "FileFormatError",
    "QuadConfig", "cell_weight", "tail_weight",
    "FracParams", "Stencil", "build_stencil", "norm_const",
    "GridSpec", "Field", "FractionalOperator", "assemble_operator",
    "LinearMap", "CgConfig", "CgResult", "cg_solve",
    "ManufacturedFn", "manufactured_eval", "StudyReport", "truncation_study",
    "poisson_solve", "poisson_study", "AllenCahnConfig", "allen_cahn_run", "mass",
    "build_operator", "FractionalLaplacian",
]
