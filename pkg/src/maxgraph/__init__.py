"""Spacelike maximal graphs in pseudo-Euclidean space R^{n,m}.

Discretisation, continuity-method solver, comparison barriers and
diagnostics for the Dirichlet problem of the maximal graph system.
"""

from .boundary_data import BoundaryData, acausality_margin, extend_to_interior, preset
from .domain_grid import GraphField, StructuredGrid, build_grid
from .errors import (
    AcausalityViolation,
    InfeasibleFit,
    InvalidArgument,
    LinearSolveError,
    NonConvergence,
    PreconditionViolation,
)
from .lorentz_core import Signature, SpacetimeVector, causal_class, induced_metric, lorentz_inner, spacelike_margin
from .solver import SolveState, SolverConfig, continuity_solve, newton_solve

__version__ = "0.1.0"

__all__ = [
    "AcausalityViolation",
    "BoundaryData",
    "GraphField",
    "InfeasibleFit",
    "InvalidArgument",
    "LinearSolveError",
    "NonConvergence",
    "PreconditionViolation",
    "Signature",
    "SolveState",
    "SolverConfig",
    "SpacetimeVector",
    "StructuredGrid",
    "acausality_margin",
    "build_grid",
    "causal_class",
    "continuity_solve",
    "extend_to_interior",
    "induced_metric",
    "lorentz_inner",
    "newton_solve",
    "preset",
    "spacelike_margin",
]
