from .assembly import Assembler, BoundaryRule, QuadratureContext, SaddleSystem, assemble, boundary_load, boundary_rule
from .linalg import MixedField, SaddleFactorization, SingularSystemError, SolveDiagnostics, solve_saddle
from .mesh import GAMMA0, GAMMA1, GAMMA2, GAMMA3, Mesh, build_mesh, export_mesh
from .space import BoundaryLayout, TaylorHoodSpace, build_space

__all__ = [
    "Assembler", "BoundaryLayout", "BoundaryRule", "GAMMA0", "GAMMA1", "GAMMA2", "GAMMA3", "Mesh",
    "MixedField", "QuadratureContext", "SaddleFactorization", "SaddleSystem", "SingularSystemError",
    "SolveDiagnostics", "TaylorHoodSpace", "assemble", "boundary_load", "boundary_rule", "build_mesh",
    "build_space", "export_mesh", "solve_saddle",
]
