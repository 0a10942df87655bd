"""Augmented Lagrangian preconditioning for variable-viscosity Stokes flow.

Q_k x P_{k-1}^disc discretizations on rectangular grids, block-triangular
preconditioners with gamma-dependent Schur complement approximations, a
gamma-robust multigrid for the augmented velocity block, and dense tools
for checking the eigenvalue bounds.
"""
from .al_precond import BlockPreconditioner, SchurApprox, make_schur, solve_stokes
from .assembly import StokesBlocks, assemble_stokes
from .elements import make_pressure_space, make_velocity_space
from .mesh import Mesh, build_hierarchy, build_rect_mesh
from .multigrid import build_multigrid
from .sparse_linalg import SolveReport, fgmres

__version__ = "0.1.0"

__all__ = ["BlockPreconditioner", "SchurApprox", "make_schur", "solve_stokes", "StokesBlocks",
           "assemble_stokes", "make_pressure_space", "make_velocity_space", "Mesh", "build_hierarchy",
           "build_rect_mesh", "build_multigrid", "SolveReport", "fgmres"]
