"""Interior-penalty DG pressure-correction solver for 2D incompressible
Navier-Stokes on uniform triangulations of the unit square."""

from .dgcore import DiscreteField, FunctionSpace, QuadratureRule, l2_project, make_spaces
from .forms import DGOperators, PenaltyConfig
from .mesh import Mesh, build_uniform_mesh
from .mms import ConvergenceReport, builtin_vortex_case, convergence_study, temporal_study
from .splitting import PressureCorrectionScheme, SchemeParams, SolverFailure, State, run

__all__ = [
    "ConvergenceReport", "DGOperators", "DiscreteField", "FunctionSpace", "Mesh",
    "PenaltyConfig", "PressureCorrectionScheme", "QuadratureRule", "SchemeParams",
    "SolverFailure", "State", "build_uniform_mesh", "builtin_vortex_case",
    "convergence_study", "l2_project", "make_spaces", "run", "temporal_study",
]
