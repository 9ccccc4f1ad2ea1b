"""State equation: the generalized Stokes problem pulled back to the unit square."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (Assembler, MixedField, SaddleFactorization, SaddleSystem, SingularSystemError,
                  SolveDiagnostics, TaylorHoodSpace)
from .forms import ProblemData, Pullback, body_force, neumann_load, state_blocks
from .geometry import map_forward

DIVERGENCE_TOL = 1e-9


@dataclass(eq=False)
class StateSolution:
    field: MixedField
    control: object
    data: ProblemData
    factorization: SaddleFactorization = field(repr=False)
    diagnostics: SolveDiagnostics
    lifting: np.ndarray = field(repr=False)
    pullback: Pullback = field(repr=False)
    system: SaddleSystem = field(repr=False)
    divergence_residual: float = 0.0

    @property
    def space(self) -> TaylorHoodSpace:
        return self.field.space

    @property
    def u(self) -> np.ndarray:
        return self.field.velocity

    @property
    def p(self) -> np.ndarray:
        return self.field.pressure


def _system(pb: Pullback) -> SaddleSystem:
    space = pb.asm.space
    A, B = state_blocks(pb)
    f = body_force(pb) + neumann_load(space, pb.data)
    return SaddleSystem(space, A, B, f, np.zeros(space.n_pressure))


def assemble_state(q, data: ProblemData, space: TaylorHoodSpace, degree: int = 4) -> SaddleSystem:
    """Unreduced system of a(q), b(q) and F(q) without the lifting.

    The lifting enters when the Dirichlet dofs are eliminated in the solve,
    which reproduces F(q) - a(q)(R gD, .) and G(q) = -b(q)(R gD, .).
    """
    return _system(Pullback(q, data, Assembler(space, degree)))


def divergence_residual(system: SaddleSystem, u: np.ndarray) -> float:
    """max |b(q)(u, psi_i) - G(q)(psi_i)| relative to max(1, |u|)."""
    res = system.B @ u - system.g
    return float(np.max(np.abs(res)) / max(1.0, float(np.linalg.norm(u))))


def solve_state(q, data: ProblemData, space: TaylorHoodSpace, degree: int = 4,
                reuse: SaddleFactorization | None = None) -> StateSolution:
    """Solve the state equation for control ``q``.

    ``reuse`` passes the factorization of a nearby control; its LU factors
    then precondition GMRES instead of factorizing again.
    """
    pb = Pullback(q, data, Assembler(space, degree))
    system = _system(pb)
    lifting = space.lifting(data.gD)
    fact = SaddleFactorization.build(system, reuse)
    sol, diag = fact.solve(system.rhs(), lifting)
    div = divergence_residual(system, sol.velocity)
    if div > DIVERGENCE_TOL:
        raise SingularSystemError(f"discrete divergence identity violated: {div:.3e}")
    return StateSolution(field=sol, control=q, data=data, factorization=fact, diagnostics=diag,
                         lifting=lifting, pullback=pb, system=system, divergence_residual=div)


def estimate_infsup(q, space: TaylorHoodSpace, degree: int = 4, dense_limit: int = 2500) -> float:
    """Discrete inf-sup constant of b(q) in the ||grad v|| x ||pi|| metric.

    Smallest eigenvalue of B K^{-1} B^T against the pressure mass matrix,
    with K the vector Laplacian on the constrained velocity space.
    """
    asm = Assembler(space, degree)
    pb = Pullback(q, ProblemData(), asm)
    identity = np.broadcast_to(np.eye(2), asm.weights.shape + (2, 2))
    K1 = asm.stiffness(identity)
    K = sp.block_diag([K1, K1], format="csc")
    free_v = np.flatnonzero(~space.constrained)
    K = K[free_v][:, free_v].tocsc()
    B = asm.divergence(pb.maps.cof)[:, free_v].tocsc()
    M = asm.p1_mass().toarray()
    lu = spla.splu(K)
    if space.n_pressure <= dense_limit:
        X = lu.solve(B.T.toarray())
        S = B @ X
        S = 0.5 * (S + S.T)
        lam = sla.eigh(S, M, eigvals_only=True, subset_by_index=[0, 0])[0]
    else:
        op = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
        S_op = spla.LinearOperator((B.shape[0],) * 2, matvec=lambda p: B @ (op @ (B.T @ p)), dtype=float)
        rng = np.random.default_rng(0)
        X0 = rng.standard_normal((B.shape[0], 4))
        vals, _ = spla.lobpcg(S_op, X0, B=sp.csr_matrix(M), largest=False, tol=1e-8, maxiter=500)
        lam = float(np.min(vals))
    return float(np.sqrt(max(lam, 0.0)))


def export_solution_csv(sol: MixedField, path: str | Path, control=None, physical: bool = False) -> None:
    """Write ``x,y,ux,uy,p`` at the mesh vertices (optionally mapped to the physical domain)."""
    space = sol.space
    nv = space.mesh.n_vertices
    n = space.n_nodes
    xy = space.mesh.vertices
    X, Y = xy[:, 0], xy[:, 1]
    if physical:
        if control is None:
            raise ValueError("physical export needs the control")
        X, Y = map_forward(control, X, Y)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "ux", "uy", "p"])
        for i in range(nv):
            writer.writerow([f"{X[i]:.12g}", f"{Y[i]:.12g}", f"{sol.velocity[i]:.12g}",
                             f"{sol.velocity[n + i]:.12g}", f"{sol.pressure[i]:.12g}"])
