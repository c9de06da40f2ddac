"""HDG discretization of the Stokes equations with a homogeneous multigrid
solver for the condensed trace system and an augmented-Lagrangian outer
iteration."""

from .assembly import (CondensedSystem, ProblemData, TraceSpace, assemble_condensed,
                       assemble_rhs, build_trace_space, compute_errors,
                       estimate_condition_number, reconstruct_fields)
from .lagrangian import ALConfig, ALState, SolveReport, al_solve, al_step, init_pressure, solve_sequence
from .local import BDMH, RTH, SFH, Method, condense
from .mesh import MeshHierarchy, MeshLevel, build_initial_mesh, refine, validate
from .multigrid import (MultigridHierarchy, SmootherConfig, build_injection, mg_solve,
                        smooth, v_cycle)
from .problem import ManufacturedProblem

__version__ = "0.1.0"

__all__ = [
    "ALConfig", "ALState", "BDMH", "CondensedSystem", "ManufacturedProblem", "MeshHierarchy",
    "MeshLevel", "Method", "MultigridHierarchy", "ProblemData", "RTH", "SFH", "SmootherConfig",
    "SolveReport", "TraceSpace", "al_solve", "al_step", "assemble_condensed", "assemble_rhs",
    "build_initial_mesh", "build_injection", "build_trace_space", "compute_errors", "condense",
    "estimate_condition_number", "init_pressure", "mg_solve", "reconstruct_fields", "refine",
    "smooth", "solve_sequence", "v_cycle", "validate",
]
